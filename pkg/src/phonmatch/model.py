"""Audio/phoneme matching network.

Audio is encoded by two streams summed on a 20 ms grid: a frozen speech
embedder (775 ms windows every 80 ms) upsampled by a transposed convolution,
and a trainable two-layer convolutional stream over log-mel frames. Keyword
phonemes are embedded and projected to the same width. The two sequences are
concatenated in time and mixed by causally masked self-attention; a GRU over
the joint sequence gives the utterance match probability and a linear head on
the phoneme rows gives per-phoneme match probabilities.

All graph methods work on zero-padded batches with explicit per-item
lengths; padded positions are kept at exactly zero.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, fields
from typing import Callable, Dict, Mapping, NamedTuple, Optional

import numpy as np

from . import nn
from .audio import N_MELS, Waveform, compute_log_mel
from .g2p import VOCAB_SIZE
from .nn import Parameter, Tensor

EMBEDDER_WINDOW = 12400  # 775 ms
EMBEDDER_HOP = 1280  # 80 ms
EMBEDDER_DIM = 96
MELS_PER_EMBEDDER_HOP = EMBEDDER_HOP // 160
MELS_PER_EMBEDDER_WINDOW = (EMBEDDER_WINDOW - 400) // 160 + 1
TCONV_KERNEL = 5
TCONV_STRIDE = 4


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    mel_dim: int = N_MELS
    phoneme_vocab: int = VOCAB_SIZE
    pretrained_stream_enabled: bool = True
    self_attention_enabled: bool = True
    phoneme_loss_enabled: bool = True
    seed: int = 0
    embedder_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def embedder_frames(num_samples: int) -> int:
    """Embedder output length for a waveform already padded to at least one window."""
    return (num_samples - EMBEDDER_WINDOW) // EMBEDDER_HOP + 1


def audio_frames(num_mel_frames: int) -> int:
    return -(-num_mel_frames // 2)


def pad_for_embedder(samples: np.ndarray) -> np.ndarray:
    short = EMBEDDER_WINDOW - len(samples)
    if short <= 0:
        return samples
    return np.pad(samples, (0, short), mode="reflect")


class StubEmbedder:
    """Deterministic stand-in for a frozen pre-trained speech embedder.

    Each 775 ms window is summarised by the mean of its log-mel frames,
    standardised across the 40 bands, projected by a fixed random 40x96
    matrix and squashed with tanh.
    """

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng([seed, zlib.crc32(b"embedder.projection")])
        weights = rng.standard_normal((N_MELS, EMBEDDER_DIM)) / math.sqrt(N_MELS)
        self.seed = seed
        self.projection = Parameter(weights.astype(np.float32), "embedder.projection", trainable=False)

    def __call__(self, w: Waveform, utt_id: Optional[str] = None) -> np.ndarray:
        padded = Waveform(pad_for_embedder(w.samples))
        mel = compute_log_mel(padded)
        n = embedder_frames(len(padded))
        summary = np.stack([
            mel[i * MELS_PER_EMBEDDER_HOP:i * MELS_PER_EMBEDDER_HOP + MELS_PER_EMBEDDER_WINDOW].mean(axis=0)
            for i in range(n)
        ])
        summary = (summary - summary.mean(axis=1, keepdims=True)) / (summary.std(axis=1, keepdims=True) + 1e-6)
        return np.tanh(summary @ self.projection.data.astype(np.float64)).astype(np.float32)


class PrecomputedEmbedder:
    """Serves externally computed embeddings keyed by utterance id."""

    def __init__(self, table: Mapping[str, np.ndarray]):
        for key, arr in table.items():
            if arr.ndim != 2 or arr.shape[1] != EMBEDDER_DIM or arr.shape[0] < 1:
                raise ValueError(f"embedding for {key!r} has shape {arr.shape}, expected [T, {EMBEDDER_DIM}]")
        self.table = dict(table)

    def __call__(self, w: Waveform, utt_id: Optional[str] = None) -> np.ndarray:
        if utt_id not in self.table:
            raise KeyError(f"no precomputed embedding for utterance {utt_id!r}")
        return self.table[utt_id]


def load_embedding_file(path) -> PrecomputedEmbedder:
    _, tensors = nn.read_container(path)
    return PrecomputedEmbedder(tensors)


def save_embedding_file(path, table: Mapping[str, np.ndarray]) -> None:
    nn.write_container(path, dict(table), meta={"kind": "embeddings", "dim": EMBEDDER_DIM})


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class ModelOutput(NamedTuple):
    p_utt: Tensor  # [B]
    p_phon: Optional[Tensor]  # [B, Tt_max]
    audio_lengths: np.ndarray
    phoneme_lengths: np.ndarray


class PhonMatchNet:
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        self.training = True
        self.params: Dict[str, Parameter] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.embedder: Callable = StubEmbedder(cfg.embedder_seed)
        self.params["embedder.projection"] = self.embedder.projection

        d, e = cfg.embed_dim, EMBEDDER_DIM
        if cfg.pretrained_stream_enabled:
            self._weight("pre.tconv.weight", (TCONV_KERNEL, e, e), TCONV_KERNEL * e, TCONV_KERNEL * e)
            self._zeros("pre.tconv.bias", (e,))
            self._weight("pre.fc.weight", (d, e), e, d)
            self._zeros("pre.fc.bias", (d,))
        self._weight("conv1.weight", (3, cfg.mel_dim, d), 3 * cfg.mel_dim, 3 * d)
        self._zeros("conv1.bias", (d,))
        self._batchnorm("bn1", d)
        self._weight("conv2.weight", (3, d, d), 3 * d, 3 * d)
        self._zeros("conv2.bias", (d,))
        self._batchnorm("bn2", d)
        self._weight("text.embedding", (cfg.phoneme_vocab, d), cfg.phoneme_vocab, d)
        self._weight("text.fc.weight", (d, d), d, d)
        self._zeros("text.fc.bias", (d,))
        self._weight("gru.W", (3 * d, d), d, 3 * d)
        rng = self._rng("gru.U")
        self._add("gru.U", np.concatenate([_orthogonal(rng, d) for _ in range(3)]))
        self._zeros("gru.b", (3 * d,))
        self._weight("utt.fc.weight", (1, d), d, 1)
        self._zeros("utt.fc.bias", (1,))
        if cfg.phoneme_loss_enabled:
            self._weight("phon.fc.weight", (1, d), d, 1)
            self._zeros("phon.fc.bias", (1,))

    # construction helpers -------------------------------------------------
    def _rng(self, name: str):
        # one stream per parameter name, so ablations leave other inits unchanged
        return np.random.default_rng([self.cfg.seed, zlib.crc32(name.encode())])

    def _add(self, name, value):
        self.params[name] = Parameter(value, name)

    def _weight(self, name, shape, fan_in, fan_out):
        self._add(name, _glorot(self._rng(name), shape, fan_in, fan_out))

    def _zeros(self, name, shape):
        self._add(name, np.zeros(shape))

    def _batchnorm(self, name, channels):
        self._add(f"{name}.gamma", np.ones(channels))
        self._zeros(f"{name}.beta", (channels,))
        dtype = nn.get_default_dtype()
        self.buffers[f"{name}.running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers[f"{name}.running_var"] = np.ones(channels, dtype=dtype)

    # bookkeeping ----------------------------------------------------------
    @property
    def dtype(self):
        return self.params["conv1.weight"].dtype

    def train(self) -> "PhonMatchNet":
        self.training = True
        return self

    def eval(self) -> "PhonMatchNet":
        self.training = False
        return self

    def trainable_parameters(self) -> list:
        return [p for p in self.params.values() if p.trainable]

    def count_parameters(self) -> int:
        return sum(p.data.size for p in self.trainable_parameters())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"param/{k}": p.data.copy() for k, p in self.params.items()}
        state.update({f"buffer/{k}": v.copy() for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        expected = {f"param/{k}": p.data for k, p in self.params.items()}
        expected.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        given = {k: v for k, v in state.items() if k.startswith(("param/", "buffer/"))}
        missing = sorted(set(expected) - set(given))
        unexpected = sorted(set(given) - set(expected))
        if missing or unexpected:
            raise ValueError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        wrong = [k for k in expected if tuple(np.shape(given[k])) != expected[k].shape]
        if wrong:
            raise ValueError(f"state mismatch: wrong shapes for {wrong}")
        for key, value in given.items():
            kind, name = key.split("/", 1)
            target = self.params[name].data if kind == "param" else self.buffers[name]
            target[...] = value

    def _bn(self, x: Tensor, name: str, mask: np.ndarray) -> Tensor:
        return nn.batchnorm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                            self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
                            training=self.training, mask=mask)

    # graph ----------------------------------------------------------------
    def pretrained_stream(self, pre: np.ndarray, pre_lengths: np.ndarray, audio_lengths: np.ndarray) -> Tensor:
        """Upsample embedder features [B, T_pre, 96] to the 20 ms grid, cropping or zero-padding to T_a."""
        p = self.params
        x = Tensor(np.asarray(pre, dtype=self.dtype))
        up = nn.tconv1d(x, p["pre.tconv.weight"], p["pre.tconv.bias"], stride=TCONV_STRIDE)
        h = nn.relu(nn.fc(up, p["pre.fc.weight"], p["pre.fc.bias"]))
        raw_lengths = (np.asarray(pre_lengths) - 1) * TCONV_STRIDE + TCONV_KERNEL
        keep = np.minimum(raw_lengths, audio_lengths)
        t_a = int(np.max(audio_lengths))
        positions = np.arange(t_a)[None, :]
        index = np.where((positions < keep[:, None]) & (positions < h.shape[1]), positions, -1)
        return nn.gather_rows(h, index)

    def trainable_stream(self, mel: np.ndarray, mel_lengths: np.ndarray) -> Tensor:
        p = self.params
        x = Tensor(np.asarray(mel, dtype=self.dtype))
        audio_lengths = audio_frames(np.asarray(mel_lengths))
        mask = _length_mask(audio_lengths, audio_frames(x.shape[1]))
        h = nn.conv1d(x, p["conv1.weight"], p["conv1.bias"], stride=2)
        h = nn.relu(self._bn(h, "bn1", mask))
        h = nn.conv1d(h, p["conv2.weight"], p["conv2.bias"], stride=1)
        return nn.relu(self._bn(h, "bn2", mask))

    def audio_encode(self, mel, mel_lengths, pre=None, pre_lengths=None) -> tuple:
        """Return (E_a [B, T_a, D], per-item T_a)."""
        mel_lengths = np.asarray(mel_lengths)
        audio_lengths = audio_frames(mel_lengths)
        e_a = self.trainable_stream(mel, mel_lengths)
        if self.cfg.pretrained_stream_enabled:
            stream = self.pretrained_stream(pre, pre_lengths, audio_lengths)
            if stream.shape != e_a.shape:
                raise RuntimeError(f"audio stream length mismatch {stream.shape} vs {e_a.shape}")
            e_a = nn.add(e_a, stream)
        return e_a, audio_lengths

    def text_encode(self, phoneme_ids: np.ndarray, phoneme_lengths: np.ndarray) -> Tensor:
        ids = np.asarray(phoneme_ids)
        lengths = np.asarray(phoneme_lengths)
        mask = _length_mask(lengths, ids.shape[1])
        if (ids[mask.astype(bool)] == 0).any():
            raise ValueError("PAD symbol inside a phoneme sequence")
        p = self.params
        h = nn.embedding(ids, p["text.embedding"])
        h = nn.relu(nn.fc(h, p["text.fc.weight"], p["text.fc.bias"]))
        return nn.mul(h, mask[..., None])

    def pattern_extract(self, e_a: Tensor, audio_lengths, e_t: Tensor, phoneme_lengths) -> tuple:
        """Mix audio and phoneme rows; return (E_j, joint lengths, phoneme row offsets)."""
        audio_lengths = np.asarray(audio_lengths)
        phoneme_lengths = np.asarray(phoneme_lengths)
        if not self.cfg.self_attention_enabled:
            key_mask = np.where(_length_mask(audio_lengths, e_a.shape[1]) > 0, 0.0, nn.MASK_VALUE)
            mask = np.broadcast_to(key_mask[:, None, :], (e_t.shape[0], e_t.shape[1], e_a.shape[1]))
            e_j = nn.attention(e_t, e_a, e_a, mask)
            e_j = nn.mul(e_j, _length_mask(phoneme_lengths, e_t.shape[1])[..., None])
            return e_j, phoneme_lengths, np.zeros_like(phoneme_lengths)
        t_a_max, t_t_max = e_a.shape[1], e_t.shape[1]
        n = t_a_max + t_t_max
        joint = nn.concat([e_a, e_t], axis=1)
        pos = np.arange(n)[None, :]
        a_len, t_len = audio_lengths[:, None], phoneme_lengths[:, None]
        index = np.where(pos < a_len, pos,
                         np.where(pos < a_len + t_len, t_a_max + pos - a_len, -1))
        e_c = nn.gather_rows(joint, index)
        lengths = audio_lengths + phoneme_lengths
        valid = _length_mask(lengths, n)
        mask = nn.causal_mask(n)[None] + np.where(valid[:, None, :] > 0, 0.0, nn.MASK_VALUE)
        e_j = nn.attention(e_c, e_c, e_c, mask)
        return nn.mul(e_j, valid[..., None]), lengths, audio_lengths

    def discriminate(self, e_j: Tensor, joint_lengths, phoneme_offsets, phoneme_lengths) -> tuple:
        """Return (P_utt [B], P_phon [B, Tt_max] or None)."""
        p = self.params
        joint_lengths = np.asarray(joint_lengths)
        phoneme_lengths = np.asarray(phoneme_lengths)
        states = nn.gru(e_j, p["gru.W"], p["gru.U"], p["gru.b"],
                        mask=_length_mask(joint_lengths, e_j.shape[1]))
        logit = nn.fc(nn.last_step(states), p["utt.fc.weight"], p["utt.fc.bias"])
        p_utt = nn.sigmoid(nn.reshape(logit, (e_j.shape[0],)))
        if not self.cfg.phoneme_loss_enabled:
            return p_utt, None
        t_t = int(np.max(phoneme_lengths))
        pos = np.arange(t_t)[None, :]
        index = np.where(pos < phoneme_lengths[:, None], np.asarray(phoneme_offsets)[:, None] + pos, -1)
        rows = nn.gather_rows(e_j, index)
        logits = nn.fc(rows, p["phon.fc.weight"], p["phon.fc.bias"])
        p_phon = nn.sigmoid(nn.reshape(logits, (e_j.shape[0], t_t)))
        return p_utt, p_phon

    def forward(self, batch) -> ModelOutput:
        e_a, audio_lengths = self.audio_encode(batch.mel, batch.mel_lengths, batch.pre, batch.pre_lengths)
        e_t = self.text_encode(batch.phoneme_ids, batch.phoneme_lengths)
        e_j, joint_lengths, offsets = self.pattern_extract(e_a, audio_lengths, e_t, batch.phoneme_lengths)
        p_utt, p_phon = self.discriminate(e_j, joint_lengths, offsets, batch.phoneme_lengths)
        return ModelOutput(p_utt, p_phon, audio_lengths, np.asarray(batch.phoneme_lengths))

    __call__ = forward


def _length_mask(lengths, width: int) -> np.ndarray:
    lengths = np.asarray(lengths)
    return (np.arange(width)[None, :] < lengths[:, None]).astype(np.float64)


def count_parameters(cfg: ModelConfig = ModelConfig()) -> int:
    return PhonMatchNet(cfg).count_parameters()
