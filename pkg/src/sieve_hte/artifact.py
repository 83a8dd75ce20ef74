"""Self-describing JSON document holding a fitted model and its inference."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .hermite import LinkCoefficients
from .single_index import SingleIndexFit

SCHEMA_VERSION = 1


def _list(a):
    if a is None:
        return None
    return np.asarray(a, dtype=float).tolist()


def _array(a):
    return None if a is None else np.asarray(a, dtype=float)


@dataclass
class FitArtifact:
    gamma: list
    coeffs: list
    cap: float
    k: int
    sigma2: float
    objective: float
    lagrange: float
    convergence: dict
    nuisance: dict
    inference: dict
    covariates: list
    provenance: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def build(cls, pipeline_fit, report, covariates, provenance):
        fit = pipeline_fit.fit
        pf = pipeline_fit.propensity
        nuisance = {
            "propensity": {
                "family": pf.family.value,
                "beta": _list(pf.beta),
                "converged": bool(pf.converged),
                "iterations": int(pf.iterations),
                "log_likelihood": float(pf.log_likelihood),
            },
            "clip": list(pipeline_fit.pseudo.clip_used) if pipeline_fit.pseudo.clip_used else None,
            "n_clipped": int(pipeline_fit.pseudo.n_clipped),
        }
        for name, of in (("outcome0", pipeline_fit.outcome0), ("outcome1", pipeline_fit.outcome1)):
            nuisance[name] = {"feature_map": of.feature_map.value, "alpha": _list(of.alpha)}
        inference = {}
        if report is not None:
            inference = {
                "level": float(report.level),
                "b_resamples": int(report.b_resamples),
                "failures": int(report.failures),
                "se_gamma_boot": _list(report.se_gamma_boot),
                "se_gamma_plugin": _list(report.se_gamma_plugin),
                "se_coeffs_plugin": _list(report.se_coeffs_plugin),
                "ci_gamma": [[float(lo), float(hi)] for lo, hi in report.ci_gamma],
                "coeff_cov": _list(report.coeff_cov),
                "sigma_gamma_reduced": _list(report.sigma_gamma_reduced),
                "plugin_label": report.plugin_label,
            }
        return cls(
            gamma=_list(fit.gamma),
            coeffs=_list(fit.coeffs.c),
            cap=float(fit.coeffs.cap),
            k=int(fit.k),
            sigma2=float(fit.sigma2),
            objective=float(fit.objective),
            lagrange=float(fit.lagrange),
            convergence={
                "converged": bool(fit.converged),
                "iterations": int(fit.iterations),
                "starts": int(fit.starts),
            },
            nuisance=nuisance,
            inference=inference,
            covariates=list(covariates),
            provenance=provenance,
        )

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "gamma": self.gamma,
            "coeffs": self.coeffs,
            "cap": self.cap,
            "k": self.k,
            "sigma2": self.sigma2,
            "objective": self.objective,
            "lagrange": self.lagrange,
            "convergence": self.convergence,
            "nuisance": self.nuisance,
            "inference": self.inference,
            "covariates": self.covariates,
            "provenance": self.provenance,
        }

    def dumps(self):
        # json writes floats with repr, which round-trips exactly
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def from_dict(cls, data):
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported artifact schema_version {version!r}")
        return cls(**data)

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def single_index_fit(self):
        """Rebuild the fitted single-index model (enough for prediction)."""
        return SingleIndexFit(
            gamma=np.asarray(self.gamma, dtype=float),
            coeffs=LinkCoefficients(np.asarray(self.coeffs, dtype=float), self.cap),
            k=self.k,
            lagrange=self.lagrange,
            sigma2=self.sigma2,
            objective=self.objective,
            starts=self.convergence["starts"],
            iterations=self.convergence["iterations"],
            converged=self.convergence["converged"],
        )

    @property
    def coeff_cov(self):
        return _array(self.inference.get("coeff_cov"))

    def gamma_se(self):
        se = self.inference.get("se_gamma_boot") or self.inference.get("se_gamma_plugin")
        return _array(se)
