"""AIPW pseudo-outcomes whose conditional mean identifies tau(x)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .nuisance import DEFAULT_CLIP, predict_outcome, predict_propensity


@dataclass(frozen=True)
class PseudoOutcome:
    values: np.ndarray
    clip_used: tuple | None
    n_clipped: int

    @property
    def n(self):
        return self.values.size


def aipw_transform(y, d, prob, mu1, mu0):
    """Elementwise AIPW pseudo-outcome for already evaluated nuisances."""
    y, d, prob, mu1, mu0 = (np.asarray(a, dtype=float) for a in (y, d, prob, mu1, mu0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = d * (y - mu1) / prob - (1 - d) * (y - mu0) / (1 - prob) + mu1 - mu0
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise NumericError(f"non-finite pseudo-outcome at row {int(bad[0])}")
    return out


def aipw_pseudo_outcome(frame, pfit, ofit0, ofit1, clip=DEFAULT_CLIP):
    """Pseudo-outcomes for a frame from fitted nuisance models.

    Propensities are clamped to ``clip`` here (``None`` disables clamping)
    and the number of clamped rows is recorded on the result.
    """
    if ofit0.arm != 0 or ofit1.arm != 1:
        raise InputError("outcome fits must be passed as (arm 0, arm 1)")
    raw = predict_propensity(pfit, frame.x, clip=None)
    raw = np.atleast_1d(raw)
    if clip is None:
        prob, n_clipped = raw, 0
    else:
        prob = predict_propensity(pfit, frame.x, clip=clip)
        prob = np.atleast_1d(prob)
        n_clipped = int(np.count_nonzero(prob != raw))
    mu1 = np.atleast_1d(predict_outcome(ofit1, frame.x))
    mu0 = np.atleast_1d(predict_outcome(ofit0, frame.x))
    values = aipw_transform(frame.y, frame.d, prob, mu1, mu0)
    return PseudoOutcome(values, None if clip is None else tuple(clip), n_clipped)
