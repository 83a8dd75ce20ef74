"""End-to-end estimator: nuisances, pseudo-outcomes, single-index fit."""

from __future__ import annotations

from dataclasses import dataclass

from .nuisance import (
    DEFAULT_CLIP,
    Family,
    FeatureMap,
    ObservationFrame,
    OutcomeFit,
    PropensityFit,
    fit_outcome_arm,
    fit_propensity,
)
from .pseudo import PseudoOutcome, aipw_pseudo_outcome
from .single_index import FitOptions, SingleIndexFit, fit_single_index


@dataclass(frozen=True)
class PipelineConfig:
    family: Family = Family.LOGISTIC
    outcome_map: FeatureMap = FeatureMap.LINEAR
    clip: tuple | None = DEFAULT_CLIP

    @classmethod
    def from_flags(cls, ps_ok=True, outcome_ok=True, clip=DEFAULT_CLIP,
                   correct_map=FeatureMap.LINEAR):
        """Correct or deliberately misspecified nuisance models.

        ``correct_map`` is the outcome expansion that contains the true
        arm-wise regression functions.
        """
        return cls(
            Family.LOGISTIC if ps_ok else Family.PROBIT,
            FeatureMap(correct_map) if outcome_ok else FeatureMap.QUADRATIC,
            clip,
        )


@dataclass(frozen=True)
class PipelineFit:
    propensity: PropensityFit
    outcome0: OutcomeFit
    outcome1: OutcomeFit
    pseudo: PseudoOutcome
    fit: SingleIndexFit
    provenance: dict


def fit_nuisances(frame, config=PipelineConfig()):
    pfit = fit_propensity(frame, config.family)
    ofit0 = fit_outcome_arm(frame, 0, config.outcome_map)
    ofit1 = fit_outcome_arm(frame, 1, config.outcome_map)
    return pfit, ofit0, ofit1


def fit_pipeline(frame: ObservationFrame, config=PipelineConfig(), opts=None, init=None):
    """Fit every stage on ``frame`` and return all intermediate results."""
    opts = opts or FitOptions()
    pfit, ofit0, ofit1 = fit_nuisances(frame, config)
    pseudo = aipw_pseudo_outcome(frame, pfit, ofit0, ofit1, config.clip)
    fit = fit_single_index(pseudo, frame.x, opts, init=init)
    provenance = {
        "propensity_family": pfit.family.value,
        "outcome_map": ofit0.feature_map.value,
        "clip": config.clip,
        "n_clipped": pseudo.n_clipped,
        "k": fit.k,
    }
    return PipelineFit(pfit, ofit0, ofit1, pseudo, fit, provenance)
