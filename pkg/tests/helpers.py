"""Finite-difference gradient oracle shared by the test modules."""

import numpy as np

from phonmatch import nn
from phonmatch.nn import Tensor


def numeric_grad(f, arrays, index, eps=1e-6):
    """Central finite difference of scalar ``f(*arrays)`` w.r.t. ``arrays[index]`` (all elements)."""
    a = arrays[index]
    g = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        old = a[idx]
        a[idx] = old + eps
        hi = f(*arrays)
        a[idx] = old - eps
        lo = f(*arrays)
        a[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_err(analytic, numeric, floor=1e-6):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def check_op_gradients(op, arrays, seed, eps=1e-6):
    """Max elementwise relative error between autodiff and finite differences for ``op``.

    The scalar probed is sum(op(...) * R) for a fixed random R, so every
    output element contributes.
    """
    rng = np.random.default_rng(seed + 1000)
    with nn.default_dtype(np.float64):
        probe = rng.standard_normal(op(*[Tensor(a) for a in arrays]).shape)

        def scalar(*xs):
            return float((op(*[Tensor(x) for x in xs]).data * probe).sum())

        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        nn.total(nn.mul(op(*tensors), probe)).backward()
        worst = 0.0
        for i, t in enumerate(tensors):
            num = numeric_grad(scalar, [a.copy() for a in arrays], i, eps)
            worst = max(worst, float(rel_err(t.grad, num).max()))
    return worst


def tiny_batch(seed, mel_lengths=(12, 11), phoneme_lengths=(3, 2)):
    """Two-item batch on the model's input grid: T_a = 6, T_t <= 3."""
    from phonmatch.data import Batch

    rng = np.random.default_rng(seed)
    b, t_mel, t_t = len(mel_lengths), max(mel_lengths), max(phoneme_lengths)
    mel = rng.standard_normal((b, t_mel, 40))
    ids = np.zeros((b, t_t), dtype=np.int64)
    y_phon = np.zeros((b, t_t))
    for i, (m, n) in enumerate(zip(mel_lengths, phoneme_lengths)):
        mel[i, m:] = 0.0
        ids[i, :n] = rng.integers(1, 40, n)
        y_phon[i, :n] = rng.integers(0, 2, n)
    return Batch(mel=mel, mel_lengths=np.array(mel_lengths), pre=np.tanh(rng.standard_normal((b, 1, 96))),
                 pre_lengths=np.ones(b, dtype=int), phoneme_ids=ids, phoneme_lengths=np.array(phoneme_lengths),
                 y_utt=np.arange(b) % 2 * 1.0, y_phon=y_phon, trial_ids=tuple(map(str, range(b))))


def end_to_end_gradient_error(seed, samples_per_param=4, eps=1e-6, cfg=None):
    """Worst relative error of d(total loss)/d(param) over sampled entries of every trainable parameter."""
    from phonmatch.criterion import total_loss
    from phonmatch.model import ModelConfig, PhonMatchNet

    rng = np.random.default_rng(seed)
    with nn.default_dtype(np.float64):
        model = PhonMatchNet(cfg or ModelConfig(seed=seed))
        for p in model.trainable_parameters():  # break the zero-bias symmetry so bias paths are exercised
            if p.name.endswith(("bias", ".b", "beta")):
                p.data[...] = 0.1 * rng.standard_normal(p.shape)
        batch = tiny_batch(seed)

        def loss():
            out = model(batch)
            return total_loss(out.p_utt, batch.y_utt, out.p_phon, batch.y_phon, batch.phoneme_mask,
                              model.cfg.phoneme_loss_enabled).total

        model.zero_grad()
        loss().backward()
        worst = 0.0
        for p in model.trainable_parameters():
            for _ in range(samples_per_param):
                idx = tuple(int(rng.integers(0, s)) for s in p.shape)
                old = p.data[idx]
                p.data[idx] = old + eps
                hi = loss().item()
                p.data[idx] = old - eps
                lo = loss().item()
                p.data[idx] = old
                num = (hi - lo) / (2 * eps)
                worst = max(worst, float(rel_err(np.array(p.grad[idx]), np.array(num), floor=1e-5)))
    return worst


def brute_force_eer(scores, labels):
    """EER from an explicit loop over every candidate threshold (accept when score >= t)."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    points = []
    for t in sorted(set(scores)) + [float("inf")]:
        far = sum(1 for s in neg if s >= t) / len(neg)
        frr = sum(1 for s in pos if s < t) / len(pos)
        points.append((far, frr))
    for (far0, frr0), (far1, frr1) in zip(points, points[1:]):
        if far0 - frr0 == 0:
            return far0
        if far0 - frr0 > 0 >= far1 - frr1:
            w = (far0 - frr0) / ((far0 - frr0) - (far1 - frr1))
            return far0 + w * (far1 - far0)
    return points[-1][0]


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def random_score_set(rng):
    """Random scored trials (2..50), both classes present, with deliberate ties."""
    n = int(rng.integers(2, 51))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    if rng.random() < 0.5:
        scores = rng.integers(0, 8, n) / 8.0  # coarse grid => ties
    else:
        scores = rng.random(n)
    return scores, labels
