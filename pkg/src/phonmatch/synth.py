"""Synthetic keyword corpus.

Each phoneme is rendered as a fixed chord of three sinusoids whose
frequencies are derived from the phoneme id, lasting 120 ms. An utterance
concatenates the templates of its phonemes with seeded per-phoneme
amplitude and duration jitter of up to 20 %. This is not speech; it only
gives the model a consistent audio/phoneme mapping to learn.
"""

from __future__ import annotations

import json
import os
import re
from typing import List, Sequence

import numpy as np

from .audio import SAMPLE_RATE, Waveform, write_wav
from .data import ManifestEntry, write_manifest
from .g2p import PHONEME_TO_ID, Lexicon, g2p_convert

PHONEME_DURATION = 0.120
JITTER = 0.20
CHORD_MULTIPLIERS = (1, 5, 11)
BASE_FREQUENCY = 150.0
OCTAVES = 5.0
AMPLITUDE = 0.1
FADE = 0.005


def chord_frequencies(phoneme: str) -> np.ndarray:
    i = PHONEME_TO_ID[phoneme]
    n = len(PHONEME_TO_ID)
    return np.array([BASE_FREQUENCY * 2.0 ** (OCTAVES * ((i * k) % n) / n) for k in CHORD_MULTIPLIERS])


def phoneme_template(phoneme: str, duration: float = PHONEME_DURATION) -> np.ndarray:
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    tone = AMPLITUDE * np.sin(2 * np.pi * chord_frequencies(phoneme)[:, None] * t).sum(axis=0)
    ramp = min(int(FADE * SAMPLE_RATE), n // 2)
    if ramp:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        tone[:ramp] *= fade
        tone[n - ramp:] *= fade[::-1]
    return tone


def render_phonemes(phonemes: Sequence[str], rng: np.random.Generator | None = None) -> Waveform:
    pieces = []
    for ph in phonemes:
        if rng is None:
            pieces.append(phoneme_template(ph))
            continue
        scale, gain = rng.uniform(1 - JITTER, 1 + JITTER, size=2)
        pieces.append(gain * phoneme_template(ph, PHONEME_DURATION * scale))
    samples = np.concatenate(pieces)
    if len(samples) < 400:
        samples = np.pad(samples, (0, 400 - len(samples)))
    return Waveform(samples)


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_") or "kw"


def synth_dataset(keywords: Sequence[str], utterances_per_keyword: int, seed: int, out_dir,
                  lexicon: Lexicon) -> str:
    """Render the corpus as WAV files plus ``manifest.jsonl`` and ``spec.json``; return the manifest path."""
    os.makedirs(os.path.join(out_dir, "wav"), exist_ok=True)
    rng = np.random.default_rng(seed)
    entries: List[ManifestEntry] = []
    for k, keyword in enumerate(keywords):
        phonemes = g2p_convert(keyword, lexicon)
        for u in range(utterances_per_keyword):
            uid = f"{_slug(keyword)}_{k:03d}_{u:03d}"
            path = os.path.join(out_dir, "wav", f"{uid}.wav")
            write_wav(path, render_phonemes(phonemes, rng))
            entries.append(ManifestEntry(uid, path, keyword))
    manifest = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(manifest, entries)
    with open(os.path.join(out_dir, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump({"keywords": list(keywords), "utterances_per_keyword": utterances_per_keyword,
                   "seed": seed, "phoneme_duration": PHONEME_DURATION, "jitter": JITTER,
                   "chord_multipliers": list(CHORD_MULTIPLIERS), "base_frequency": BASE_FREQUENCY,
                   "octaves": OCTAVES, "amplitude": AMPLITUDE, "sample_rate": SAMPLE_RATE},
                  fh, indent=2)
    return manifest
