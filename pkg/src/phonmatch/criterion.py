"""Match labels and the detection loss (utterance BCE + phoneme BCE)."""

from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import nn
from .g2p import normalize_text
from .nn import Tensor


def utterance_label(keyword: str, transcript: str) -> int:
    if not keyword.strip() or not transcript.strip():
        raise ValueError("keyword and transcript must be non-empty")
    return int(normalize_text(keyword) == normalize_text(transcript))


LABEL_RULES = ("index",)


def phoneme_labels(keyword_ph: Sequence, speech_ph: Sequence, rule: str = "index") -> np.ndarray:
    """Position-wise phoneme agreement over the keyword's length.

    No alignment is attempted: position ``p`` is 1 only when the speech
    sequence has a phoneme at ``p`` and it equals the keyword's. ``rule`` is
    reserved for an edit-alignment variant, which is not implemented.
    """
    if rule not in LABEL_RULES:
        raise NotImplementedError(f"phoneme label rule {rule!r} is not implemented")
    if len(keyword_ph) == 0:
        raise ValueError("keyword phoneme sequence is empty")
    labels = np.zeros(len(keyword_ph), dtype=np.int8)
    for p, symbol in enumerate(keyword_ph):
        if p < len(speech_ph) and speech_ph[p] == symbol:
            labels[p] = 1
    return labels


class LossBreakdown(NamedTuple):
    total: Tensor
    utt: Tensor
    phon: Optional[Tensor]

    def values(self) -> tuple:
        return (self.total.item(), self.utt.item(), 0.0 if self.phon is None else self.phon.item())


def total_loss(p_utt: Tensor, y_utt, p_phon: Optional[Tensor], y_phon, phoneme_mask,
               phoneme_loss_enabled: bool = True) -> LossBreakdown:
    """Sum of the utterance BCE and the phoneme BCE over unpadded positions.

    With the phoneme loss disabled the total is the utterance term alone.
    """
    utt = nn.bce(p_utt, np.asarray(y_utt))
    if not phoneme_loss_enabled or p_phon is None:
        return LossBreakdown(utt, utt, None)
    mask = np.asarray(phoneme_mask)
    if mask.sum() == 0:
        raise ValueError("every phoneme position is padding")
    phon = nn.bce(p_phon, np.asarray(y_phon), mask=mask)
    return LossBreakdown(nn.add(utt, phon), utt, phon)
