"""Manifests, trial construction and padded batches."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .audio import Waveform, compute_log_mel, mix_noise, read_wav
from .criterion import phoneme_labels, utterance_label
from .g2p import Lexicon, PhonemeSequence, g2p_convert, normalize_text, normalized_levenshtein


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    audio_path: str
    transcript: str


@dataclass(frozen=True)
class TrialPair:
    entry: ManifestEntry
    keyword: str
    y_utt: int
    y_phon: tuple
    keyword_phonemes: PhonemeSequence
    speech_phonemes: PhonemeSequence

    @property
    def trial_id(self) -> str:
        return f"{self.entry.id}|{self.keyword}"

    @property
    def distance(self) -> float:
        return normalized_levenshtein(self.keyword_phonemes, self.speech_phonemes)


def load_manifest(path) -> List[ManifestEntry]:
    """Parse a JSON-lines manifest; relative audio paths resolve against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            missing = [k for k in ("id", "audio", "transcript") if k not in record]
            if missing:
                raise DataError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            uid = str(record["id"])
            if uid in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {uid!r}")
            seen.add(uid)
            entries.append(ManifestEntry(uid, os.path.join(base, record["audio"]), record["transcript"]))
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            rel = os.path.relpath(e.audio_path, base)
            fh.write(json.dumps({"id": e.id, "audio": rel, "transcript": e.transcript}) + "\n")


def make_trial(entry: ManifestEntry, keyword: str, lexicon: Lexicon) -> TrialPair:
    kw_ph = g2p_convert(keyword, lexicon)
    sp_ph = g2p_convert(entry.transcript, lexicon)
    return TrialPair(entry, keyword, utterance_label(keyword, entry.transcript),
                     tuple(int(v) for v in phoneme_labels(kw_ph, sp_ph)), kw_ph, sp_ph)


def build_closed_vocab_trials(entries: Sequence[ManifestEntry], vocabulary: Sequence[str],
                              lexicon: Lexicon) -> List[TrialPair]:
    """Pair every utterance with every vocabulary keyword: one positive, the rest negatives."""
    normalized = {tuple(normalize_text(v)) for v in vocabulary}
    trials = []
    for e in entries:
        if tuple(normalize_text(e.transcript)) not in normalized:
            raise DataError(f"transcript {e.transcript!r} of {e.id} is not in the vocabulary")
        trials.extend(make_trial(e, kw, lexicon) for kw in vocabulary)
    return trials


def build_training_pairs(entries: Sequence[ManifestEntry], negatives_per_anchor: int, seed: int,
                         lexicon: Lexicon) -> List[TrialPair]:
    """One positive per anchor plus ``negatives_per_anchor`` other transcripts drawn without replacement."""
    keywords: Dict[tuple, str] = {}
    for e in entries:
        keywords.setdefault(tuple(normalize_text(e.transcript)), e.transcript)
    if len(keywords) < 2 and negatives_per_anchor > 0:
        raise DataError("need at least 2 distinct transcripts to sample negatives")
    if negatives_per_anchor > len(keywords) - 1:
        raise DataError(f"{negatives_per_anchor} negatives requested but only {len(keywords) - 1} "
                        "other transcripts exist")
    rng = np.random.default_rng(seed)
    keys = list(keywords)
    trials = []
    for e in entries:
        own = tuple(normalize_text(e.transcript))
        trials.append(make_trial(e, e.transcript, lexicon))
        others = [k for k in keys if k != own]
        if negatives_per_anchor:
            for i in rng.choice(len(others), size=negatives_per_anchor, replace=False):
                trials.append(make_trial(e, keywords[others[i]], lexicon))
    return trials


@dataclass(frozen=True)
class Features:
    mel: np.ndarray  # [T_mel, 40]
    pre: np.ndarray  # [T_pre, 96]


def extract_features(entries: Sequence[ManifestEntry], embedder: Callable,
                     noise: Optional[Waveform] = None, snr_range: tuple = (5.0, 20.0),
                     seed: int = 0) -> Dict[str, Features]:
    """Log-mel and embedder features per utterance, with optional one-off noise mixing."""
    rng = np.random.default_rng(seed)
    out = {}
    for e in entries:
        w = read_wav(e.audio_path)
        if noise is not None:
            w = mix_noise(w, noise, float(rng.uniform(*snr_range)))
        out[e.id] = Features(compute_log_mel(w).astype(np.float32), embedder(w, e.id))
    return out


@dataclass
class Batch:
    mel: np.ndarray  # [B, T_mel_max, 40]
    mel_lengths: np.ndarray
    pre: np.ndarray  # [B, T_pre_max, 96]
    pre_lengths: np.ndarray
    phoneme_ids: np.ndarray  # [B, T_t_max], 0 = PAD
    phoneme_lengths: np.ndarray
    y_utt: np.ndarray  # [B]
    y_phon: np.ndarray  # [B, T_t_max]
    trial_ids: tuple

    def __len__(self) -> int:
        return len(self.trial_ids)

    @property
    def phoneme_mask(self) -> np.ndarray:
        return (np.arange(self.phoneme_ids.shape[1])[None, :] < self.phoneme_lengths[:, None]).astype(np.float64)

    def unpad(self) -> list:
        """Per-item (mel, pre, phoneme ids, phoneme labels) with padding removed."""
        return [(self.mel[i, :self.mel_lengths[i]], self.pre[i, :self.pre_lengths[i]],
                 self.phoneme_ids[i, :self.phoneme_lengths[i]], self.y_phon[i, :self.phoneme_lengths[i]])
                for i in range(len(self))]


def _stack_padded(arrays: Sequence[np.ndarray], dtype) -> np.ndarray:
    width = max(len(a) for a in arrays)
    out = np.zeros((len(arrays), width) + arrays[0].shape[1:], dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out


def pad_batch(trials: Sequence[TrialPair], mels: Sequence[np.ndarray], pres: Sequence[np.ndarray]) -> Batch:
    if not trials:
        raise DataError("cannot batch an empty trial list")
    ids = [np.asarray(t.keyword_phonemes.ids, dtype=np.int64) for t in trials]
    return Batch(
        mel=_stack_padded(mels, np.float32),
        mel_lengths=np.array([len(m) for m in mels]),
        pre=_stack_padded(pres, np.float32),
        pre_lengths=np.array([len(p) for p in pres]),
        phoneme_ids=_stack_padded(ids, np.int64),
        phoneme_lengths=np.array([len(i) for i in ids]),
        y_utt=np.array([t.y_utt for t in trials], dtype=np.float64),
        y_phon=_stack_padded([np.asarray(t.y_phon, dtype=np.float64) for t in trials], np.float64),
        trial_ids=tuple(t.trial_id for t in trials),
    )


def batch_from_features(trials: Sequence[TrialPair], features: Dict[str, Features]) -> Batch:
    return pad_batch(trials, [features[t.entry.id].mel for t in trials],
                     [features[t.entry.id].pre for t in trials])


def iterate_batches(trials: Sequence[TrialPair], features: Dict[str, Features], batch_size: int,
                    rng: Optional[np.random.Generator] = None):
    order = np.arange(len(trials)) if rng is None else rng.permutation(len(trials))
    for start in range(0, len(order), batch_size):
        chunk = [trials[i] for i in order[start:start + batch_size]]
        yield batch_from_features(chunk, features)
