"""Training loop, checkpoints and key=value config files."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .criterion import total_loss
from .data import Features, TrialPair, batch_from_features, iterate_batches
from .metrics import accuracy_at_threshold, roc_summary
from .model import ModelConfig, PhonMatchNet
from .nn import AdamState

log = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    def __init__(self, epoch: int, batch_index: int, batch_ids: Sequence[str]):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index} (first trial {batch_ids[0]!r})")
        self.epoch = epoch
        self.batch_index = batch_index
        self.batch_ids = tuple(batch_ids)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 1
    val_fraction: float = 0.1
    negatives_per_anchor: int = 3
    pretrained_stream_enabled: bool = True
    self_attention_enabled: bool = True
    phoneme_loss_enabled: bool = True
    noise_wav: str = ""
    noise_snr_min: float = 5.0
    noise_snr_max: float = 20.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("epochs must be >= 0 and eval_every >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(pretrained_stream_enabled=self.pretrained_stream_enabled,
                           self_attention_enabled=self.self_attention_enabled,
                           phoneme_loss_enabled=self.phoneme_loss_enabled, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, **overrides) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    kinds = {"float": float, "int": int, "bool": bool, "str": str}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, kinds[types[key]], raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def load_config(path, **overrides) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), **overrides)


def format_config(cfg: TrainConfig) -> str:
    return "\n".join(f"{k}={str(v).lower() if isinstance(v, bool) else v}" for k, v in cfg.to_dict().items())


# checkpoints -----------------------------------------------------------------

def save_checkpoint(model: PhonMatchNet, optimizer_state: Optional[AdamState], path, extra: Optional[dict] = None) -> None:
    tensors = dict(model.state_dict())
    meta = {"kind": "checkpoint", "model_config": model.cfg.to_dict(), "extra": extra or {}}
    if optimizer_state is not None:
        meta["adam_step"] = optimizer_state.step
        for name in sorted(optimizer_state.m):
            tensors[f"adam.m/{name}"] = optimizer_state.m[name]
            tensors[f"adam.v/{name}"] = optimizer_state.v[name]
    nn.write_container(path, tensors, meta)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: Dict[str, np.ndarray]
    optimizer: Optional[AdamState]
    extra: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    meta, tensors = nn.read_container(path)
    if meta.get("kind") != "checkpoint" or "model_config" not in meta:
        raise nn.ContainerError(f"{path}: not a model checkpoint")
    state = {k: v for k, v in tensors.items() if k.startswith(("param/", "buffer/"))}
    optimizer = None
    if "adam_step" in meta:
        optimizer = AdamState(step=int(meta["adam_step"]))
        for k, v in tensors.items():
            if k.startswith("adam.m/"):
                optimizer.m[k[7:]] = v
            elif k.startswith("adam.v/"):
                optimizer.v[k[7:]] = v
    return Checkpoint(ModelConfig.from_dict(meta["model_config"]), state, optimizer, meta.get("extra", {}))


def model_from_checkpoint(path) -> PhonMatchNet:
    ckpt = load_checkpoint(path)
    model = PhonMatchNet(ckpt.model_config)
    model.load_state_dict(ckpt.state)
    return model.eval()


# training ---------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    total: float
    utt: float
    phon: float
    val_eer: Optional[float] = None
    val_auc: Optional[float] = None
    checkpoint: Optional[str] = None


@dataclass
class TrainReport:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_checkpoint: Optional[str] = None
    best_epoch: Optional[int] = None
    initial_checkpoint: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def loss_curve(self) -> List[float]:
        return [e.total for e in self.epochs]


def split_validation(trials: Sequence[TrialPair], fraction: float, seed: int) -> tuple:
    """Hold out whole utterances so no validation audio is seen in training."""
    ids = sorted({t.entry.id for t in trials})
    n_val = int(round(fraction * len(ids)))
    if n_val == 0:
        return list(trials), []
    rng = np.random.default_rng([seed, 2])
    held = set(rng.choice(ids, size=n_val, replace=False).tolist())
    return [t for t in trials if t.entry.id not in held], [t for t in trials if t.entry.id in held]


def score_trials(model: PhonMatchNet, trials: Sequence[TrialPair], features: Dict[str, Features],
                 batch_size: int = 64) -> np.ndarray:
    was_training = model.training
    model.eval()
    scores = []
    with nn.no_grad():
        for start in range(0, len(trials), batch_size):
            batch = batch_from_features(trials[start:start + batch_size], features)
            scores.append(model(batch).p_utt.data.astype(np.float64))
    model.training = was_training
    return np.concatenate(scores) if scores else np.zeros(0)


def evaluate_trials(model, trials, features) -> dict:
    scores = score_trials(model, trials, features)
    labels = np.array([t.y_utt for t in trials])
    out = {"accuracy": accuracy_at_threshold(scores, labels)}
    if 0 < labels.sum() < len(labels):
        roc = roc_summary(scores, labels)
        out.update(eer=roc.eer, auc=roc.auc)
    return out


def train_step(model: PhonMatchNet, batch, optimizer: nn.Adam) -> tuple:
    model.zero_grad()
    out = model(batch)
    losses = total_loss(out.p_utt, batch.y_utt, out.p_phon, batch.y_phon, batch.phoneme_mask,
                        model.cfg.phoneme_loss_enabled)
    total, utt, phon = losses.values()
    if losses.phon is not None and losses.total.data != losses.utt.data + losses.phon.data:
        raise AssertionError("total loss is not the sum of its utterance and phoneme terms")
    losses.total.backward()
    optimizer.step()
    return total, utt, phon


def train(model: PhonMatchNet, trials: Sequence[TrialPair], features: Dict[str, Features], cfg: TrainConfig,
          out_dir: Optional[str] = None, val_trials: Optional[Sequence[TrialPair]] = None) -> TrainReport:
    """Fit ``model`` with Adam at a fixed learning rate.

    Validation trials default to a seeded utterance-level hold-out of
    ``cfg.val_fraction``. When ``out_dir`` is given a checkpoint is written
    before training and at every evaluation; the best one (lowest
    validation EER, earliest epoch on ties) is recorded in the report.
    """
    if not trials:
        raise ValueError("no training trials")
    if val_trials is None:
        trials, val_trials = split_validation(trials, cfg.val_fraction, cfg.seed)
    optimizer = nn.Adam(model.trainable_parameters(), lr=cfg.lr)
    shuffle = np.random.default_rng([cfg.seed, 1])
    report = TrainReport()
    best = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        report.initial_checkpoint = os.path.join(out_dir, "epoch0000.ckpt")
        save_checkpoint(model, optimizer.state, report.initial_checkpoint)

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        sums = np.zeros(3)
        n = 0
        for b, batch in enumerate(iterate_batches(trials, features, cfg.batch_size, shuffle)):
            try:
                values = train_step(model, batch, optimizer)
            except nn.NonFiniteError:
                raise NumericalAbort(epoch, b, batch.trial_ids) from None
            sums += np.array(values) * len(batch)
            n += len(batch)
        record = EpochRecord(epoch, *(sums / n))
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            if val_trials:
                metrics = evaluate_trials(model, val_trials, features)
                record.val_eer, record.val_auc = metrics.get("eer"), metrics.get("auc")
            if out_dir:
                record.checkpoint = os.path.join(out_dir, f"epoch{epoch:04d}.ckpt")
                save_checkpoint(model, optimizer.state, record.checkpoint, {"epoch": epoch})
            if record.val_eer is not None and (best is None or record.val_eer < best.val_eer):
                best = record
        report.epochs.append(record)
        log.info("epoch %d total %.4f utt %.4f phon %.4f val_eer %s", epoch, record.total, record.utt,
                 record.phon, record.val_eer)

    if best is not None:
        report.best_checkpoint, report.best_epoch = best.checkpoint, best.epoch
    elif report.epochs and out_dir:
        last = report.epochs[-1]
        report.best_checkpoint, report.best_epoch = last.checkpoint, last.epoch
    elif out_dir:
        report.best_checkpoint, report.best_epoch = report.initial_checkpoint, 0
    if out_dir:
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return report
