"""Bayes factors as e-values: threshold decisions and the mean-under-null check.

Rejecting H0 when BF10 >= 1/alpha controls the type I error rate at alpha
whenever the Bayes factor satisfies the e-value condition (mean at most 1
under H0). The condition holds exactly for models without nuisance
parameters; for RE-type models it depends on the heterogeneity prior, and
``expected_bf_under_null_mc`` estimates the mean by simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, Study, Scale
from .errors import InvalidAlpha, MetaBFError
from .marginals import ModelKind, ModelSpec
from .priors import EffectPrior, HeterogeneityPrior
from .synthesis import evidence_report


@dataclass(frozen=True)
class SafeDecision:
    bf10: float
    alpha: float
    threshold: float
    reject: bool
    note: str = (
        "the threshold 1/alpha may be chosen after seeing the Bayes factor; "
        "the type I error guarantee is unaffected"
    )

    @property
    def p_e(self) -> float:
        """Reciprocal of the e-value; behaves as a conservative p-value."""
        return 1.0 / self.bf10


def safe_reject(bf10: float, alpha: float) -> SafeDecision:
    """Reject H0 iff BF10 >= 1/alpha."""
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0,1), got {alpha}")
    if bf10 <= 0:
        raise MetaBFError(f"bf10 must be > 0, got {bf10}")
    threshold = 1.0 / alpha
    return SafeDecision(bf10=bf10, alpha=alpha, threshold=threshold, reject=bf10 >= threshold)


@dataclass(frozen=True)
class EvalueCheckResult:
    k: int
    tau: float
    prior_label: str
    model: str
    reps: int
    mean_bf: float
    mc_se: float
    verdict: str          # satisfied | borderline | violated
    failures: int = 0
    flagged: bool = False  # more than 1% of replications failed

    def to_row(self) -> list:
        return [
            self.k,
            self.tau,
            self.prior_label,
            self.model,
            self.reps,
            repr(self.mean_bf),
            repr(self.mc_se),
            self.verdict,
        ]


def _verdict(mean: float, se: float) -> str:
    if mean - 3.0 * se > 1.0:
        return "violated"
    if mean + 3.0 * se <= 1.0:
        return "satisfied"
    return "borderline"


def rng_stream(master_seed: int, *path: int) -> np.random.Generator:
    """Counter-based stream splitting: reproducible regardless of order."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, path)]))


def simulate_null_dataset(
    k: int,
    tau: float,
    sigma_range: tuple[float, float],
    rng: np.random.Generator,
) -> Dataset:
    """Data under a zero global effect with heterogeneity tau."""
    sigmas = rng.uniform(sigma_range[0], sigma_range[1], size=k)
    theta = rng.normal(0.0, tau, size=k) if tau > 0 else np.zeros(k)
    ys = rng.normal(theta, sigmas)
    return Dataset(
        tuple(Study(f"s{i+1}", float(y), float(s)) for i, (y, s) in enumerate(zip(ys, sigmas))),
        Scale.SMD,
    )


def expected_bf_under_null_mc(
    k: int,
    tau: float,
    effect_prior: EffectPrior,
    het_prior: Optional[HeterogeneityPrior],
    model: ModelKind,
    reps: int,
    master_seed: int,
    *,
    sigma_range: tuple[float, float] = (0.2, 0.8),
    cell_index: int = 0,
) -> EvalueCheckResult:
    """Arithmetic mean Bayes factor over datasets generated under H0.

    The CE and FE models test a null without heterogeneity, so their data
    are generated with tau = 0 regardless of the requested tau.
    """
    if reps < 100:
        raise MetaBFError(f"need at least 100 replications, got {reps}")
    if model in (ModelKind.CE, ModelKind.FE):
        spec = ModelSpec(model, effect_prior)
        gen_tau = 0.0
    elif model in (ModelKind.RE, ModelKind.MAREMA):
        if het_prior is None:
            raise MetaBFError(f"the {model.value} model needs a heterogeneity prior")
        spec = ModelSpec(model, effect_prior, het_prior)
        gen_tau = tau
    else:
        raise MetaBFError(f"e-value check not defined for model {model.value}")

    bfs = np.empty(reps)
    failures = 0
    for rep in range(reps):
        rng = rng_stream(master_seed, cell_index, rep)
        d = simulate_null_dataset(k, gen_tau, sigma_range, rng)
        try:
            bfs[rep] = evidence_report(d, spec).bf10
        except MetaBFError:
            bfs[rep] = np.nan
            failures += 1
    good = bfs[np.isfinite(bfs)]
    n = good.size
    if n == 0:
        raise MetaBFError("every replication failed")
    mean = float(np.mean(good))
    se = float(np.std(good)) / math.sqrt(n)
    return EvalueCheckResult(
        k=k,
        tau=tau,
        prior_label=het_prior.describe() if het_prior else "-",
        model=model.value,
        reps=reps,
        mean_bf=mean,
        mc_se=se,
        verdict=_verdict(mean, se),
        failures=failures,
        flagged=failures > 0.01 * reps,
    )


def reciprocal_p_divergence_demo(
    rep_counts: Sequence[int] = (100, 1000, 10_000, 100_000),
    master_seed: int = 0,
) -> list[tuple[int, float]]:
    """Running means of 1/p for uniform p: grows without bound.

    A demonstration that the reciprocal of a p-value is not an e-value;
    there is no finite target, so nothing here is asserted in tests.
    """
    out = []
    for idx, n in enumerate(rep_counts):
        rng = rng_stream(master_seed, idx)
        p = rng.uniform(size=n)
        out.append((n, float(np.mean(1.0 / p))))
    return out
