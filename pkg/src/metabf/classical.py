"""Classical companions: Cochran's Q test and CE/RE point estimates."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .data import Dataset
from .errors import TooFewStudies, NoConvergence


@dataclass(frozen=True)
class QTestResult:
    q: float
    df: int
    p: float

    def to_dict(self) -> dict:
        return {"q": self.q, "df": self.df, "p": self.p}


@dataclass(frozen=True)
class ClassicalEstimate:
    model: str                 # "ce" or "re"
    estimate: float
    se: float
    z: float
    p: float
    tau2: Optional[float] = None
    tau2_estimator: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "estimate": self.estimate,
            "se": self.se,
            "z": self.z,
            "p": self.p,
            "tau2": self.tau2,
            "tau2_estimator": self.tau2_estimator,
        }


def cochran_q(d: Dataset) -> QTestResult:
    """Q = sum w_i (y_i - pooled)^2 with w_i = 1/sigma_i^2; chi-square upper tail."""
    if d.k < 2:
        raise TooFewStudies(f"Cochran's Q needs at least 2 studies, got {d.k}")
    w = 1.0 / np.asarray(d.variances)
    ys = np.asarray(d.y)
    pooled = float(np.sum(w * ys) / np.sum(w))
    q = float(np.sum(w * (ys - pooled) ** 2))
    df = d.k - 1
    return QTestResult(q=q, df=df, p=float(stats.chi2.sf(q, df)))


def _weighted_estimate(d: Dataset, tau2: float, model: str, **extra) -> ClassicalEstimate:
    w = 1.0 / (np.asarray(d.variances) + tau2)
    est = float(np.sum(w * np.asarray(d.y)) / np.sum(w))
    se = float(np.sum(w)) ** -0.5
    z = est / se
    return ClassicalEstimate(
        model=model, estimate=est, se=se, z=z, p=float(2.0 * stats.norm.sf(abs(z))), **extra
    )


def ce_estimate(d: Dataset) -> ClassicalEstimate:
    """Inverse-variance weighted common-effect estimate with z-test."""
    return _weighted_estimate(d, 0.0, "ce")


def tau2_dersimonian_laird(d: Dataset) -> float:
    q = cochran_q(d).q
    w = 1.0 / np.asarray(d.variances)
    c = float(np.sum(w) - np.sum(w**2) / np.sum(w))
    return max(0.0, (q - (d.k - 1)) / c)


def tau2_reml(d: Dataset, max_iter: int = 200, tol: float = 1e-10) -> float:
    """Iterative REML estimate of the between-study variance.

    Standard fixed-point iteration; falls back to DerSimonian-Laird with a
    NoConvergence warning if the iteration cap is hit.
    """
    variances = np.asarray(d.variances)
    ys = np.asarray(d.y)
    tau2 = tau2_dersimonian_laird(d)
    for _ in range(max_iter):
        w = 1.0 / (variances + tau2)
        pooled = float(np.sum(w * ys) / np.sum(w))
        num = float(np.sum(w**2 * ((ys - pooled) ** 2 - variances)))
        new = num / float(np.sum(w**2)) + 1.0 / float(np.sum(w))
        new = max(0.0, new)
        if abs(new - tau2) <= tol * max(1.0, tau2):
            return new
        tau2 = new
    warnings.warn(
        f"REML did not converge within {max_iter} iterations; "
        "falling back to the DerSimonian-Laird estimate",
        NoConvergence,
        stacklevel=2,
    )
    return tau2_dersimonian_laird(d)


def re_estimate(d: Dataset, tau2_estimator: str = "reml") -> ClassicalEstimate:
    """Random-effects estimate with the chosen tau^2 estimator (reml or dl)."""
    if d.k < 2:
        raise TooFewStudies(f"the RE estimate needs at least 2 studies, got {d.k}")
    estimator = tau2_estimator.lower()
    if estimator == "reml":
        tau2 = tau2_reml(d)
    elif estimator == "dl":
        tau2 = tau2_dersimonian_laird(d)
    else:
        raise ValueError(f"unknown tau2 estimator {tau2_estimator!r} (use 'reml' or 'dl')")
    return _weighted_estimate(d, tau2, "re", tau2=tau2, tau2_estimator=estimator)
