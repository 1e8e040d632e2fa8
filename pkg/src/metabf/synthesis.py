"""Top-level Bayes factors for the five models, trajectories, and reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import ImproperUnderBMA, InvalidAlpha, MetaBFError, PriorError
from .marginals import (
    LogMarginal,
    ModelKind,
    ModelSpec,
    alternative_hypothesis,
    analytic_ce_bf01_normal,
    ce_posterior_update,
    log_marginal,
    null_hypothesis,
    posterior_tau2_mass_above,
    PosteriorSummary,
    _log_norm_pdf,
)
from .priors import EffectPrior, HeterogeneityPrior

#: Bayes factor thresholds matching the common significance levels
ALPHA_THRESHOLDS = (0.10, 0.05, 0.01, 0.001)


@dataclass(frozen=True)
class EvidenceReport:
    """One model's evidence summary for H1 against H0."""

    model: ModelKind
    log_bf10: float
    prior_odds: float = 1.0
    pr_tau2_pos: Optional[float] = None          # marema heterogeneity check
    pr_re: Optional[float] = None                # BMA posterior mass of RE
    submodel_probs: Optional[tuple[float, float, float, float]] = None
    per_study_bf10: Optional[tuple[float, ...]] = None  # FE factors
    error_est: float = 0.0

    @property
    def bf10(self) -> float:
        return math.exp(self.log_bf10)

    @property
    def bf01(self) -> float:
        return math.exp(-self.log_bf10)

    @property
    def php_h1(self) -> float:
        return posterior_hypothesis_prob_log(self.log_bf10, self.prior_odds)

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "bf10": self.bf10,
            "log_bf10": self.log_bf10,
            "php_h1": self.php_h1,
            "pr_tau2_pos": self.pr_tau2_pos,
            "pr_re": self.pr_re,
            "submodel_probs": list(self.submodel_probs) if self.submodel_probs else None,
            "error_est": self.error_est,
        }


@dataclass(frozen=True)
class TrajectoryPoint:
    j: int
    log_bf10: Optional[float]  # None where the prefix is below the model minimum

    @property
    def bf10(self) -> Optional[float]:
        return None if self.log_bf10 is None else math.exp(self.log_bf10)


@dataclass(frozen=True)
class EvidenceTrajectory:
    model: ModelKind
    points: tuple[TrajectoryPoint, ...]
    crossings: dict = field(default_factory=dict)  # alpha -> first j with BF10 >= 1/alpha

    def final(self) -> TrajectoryPoint:
        return self.points[-1]


def posterior_hypothesis_prob(bf10: float, prior_odds: float = 1.0) -> float:
    """PHP(H1) = BF10 * odds / (1 + BF10 * odds)."""
    if bf10 <= 0 or prior_odds <= 0:
        raise MetaBFError(f"bf10 and prior_odds must be > 0, got {bf10}, {prior_odds}")
    return posterior_hypothesis_prob_log(math.log(bf10), prior_odds)


def posterior_hypothesis_prob_log(log_bf10: float, prior_odds: float = 1.0) -> float:
    if prior_odds <= 0:
        raise MetaBFError(f"prior_odds must be > 0, got {prior_odds}")
    x = log_bf10 + math.log(prior_odds)
    if x > 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _report(spec: ModelSpec, m1: LogMarginal, m0: LogMarginal, prior_odds: float, **extra) -> EvidenceReport:
    return EvidenceReport(
        model=spec.kind,
        log_bf10=m1 - m0,
        prior_odds=prior_odds,
        error_est=2.0 * 1e-6,  # quadrature relative target per marginal
        **extra,
    )


def bf_ce(d: Dataset, effect_prior: EffectPrior, prior_odds: float = 1.0) -> EvidenceReport:
    """Bayes factor for a nonzero common effect."""
    spec = ModelSpec(ModelKind.CE, effect_prior)
    m1 = log_marginal(d, spec, alternative_hypothesis(ModelKind.CE))
    m0 = log_marginal(d, spec, null_hypothesis(ModelKind.CE))
    return _report(spec, m1, m0, prior_odds)


def bf_re(
    d: Dataset,
    effect_prior: EffectPrior,
    het_prior: HeterogeneityPrior,
    prior_odds: float = 1.0,
) -> EvidenceReport:
    """Bayes factor for a nonzero global mean under the random effects model."""
    spec = ModelSpec(ModelKind.RE, effect_prior, het_prior)
    m1 = log_marginal(d, spec, alternative_hypothesis(ModelKind.RE))
    m0 = log_marginal(d, spec, null_hypothesis(ModelKind.RE))
    return _report(spec, m1, m0, prior_odds)


def bf_marema(
    d: Dataset,
    effect_prior: EffectPrior,
    het_prior: HeterogeneityPrior,
    prior_odds: float = 1.0,
) -> EvidenceReport:
    """Bayes factor on the extended support tau2 > -sigma2_min, plus Pr(tau2 > 0).

    The heterogeneity check uses the joint posterior under H1, i.e. with
    the configured effect prior in place (recorded in the report).
    """
    spec = ModelSpec(ModelKind.MAREMA, effect_prior, het_prior)
    m1 = log_marginal(d, spec, alternative_hypothesis(ModelKind.MAREMA))
    m0 = log_marginal(d, spec, null_hypothesis(ModelKind.MAREMA))
    pr_pos = posterior_tau2_mass_above(d, spec, 0.0)
    return _report(spec, m1, m0, prior_odds, pr_tau2_pos=pr_pos)


def bf_bma(
    d: Dataset,
    effect_prior: EffectPrior,
    het_prior: HeterogeneityPrior,
    submodel_priors: Sequence[float] = (0.25, 0.25, 0.25, 0.25),
    prior_odds: Optional[float] = None,
) -> EvidenceReport:
    """Model-averaged Bayes factor over {CE, RE} x {effect zero, effect free}.

    ``submodel_priors`` orders the parts as (CE&0, CE&free, RE&0, RE&free).
    The same effect prior serves theta under the CE parts and mu under the
    RE parts; the heterogeneity prior must be proper.
    """
    if not het_prior.proper:
        raise ImproperUnderBMA(
            f"model averaging needs a proper heterogeneity prior, got {het_prior.family.value}"
        )
    w = np.asarray(submodel_priors, dtype=float)
    if w.shape != (4,) or np.any(w < 0) or w.sum() <= 0:
        raise PriorError("submodel_priors must be four nonnegative weights with positive sum")
    w = w / w.sum()

    ce = ModelSpec(ModelKind.CE, effect_prior)
    re = ModelSpec(ModelKind.RE, effect_prior, het_prior)
    logm = np.array(
        [
            log_marginal(d, ce, null_hypothesis(ModelKind.CE)).value,
            log_marginal(d, ce, alternative_hypothesis(ModelKind.CE)).value,
            log_marginal(d, re, null_hypothesis(ModelKind.RE)).value,
            log_marginal(d, re, alternative_hypothesis(ModelKind.RE)).value,
        ]
    )

    with np.errstate(divide="ignore"):
        log_terms = np.log(w) + logm
    shift = np.max(log_terms)
    terms = np.exp(log_terms - shift)
    log_num = shift + math.log(terms[1] + terms[3])   # H1: effect free
    log_den = shift + math.log(terms[0] + terms[2])   # H0: effect zero
    post = terms / terms.sum()

    # prior odds default to the odds implied by the submodel weights
    if prior_odds is None:
        prior_odds = float((w[1] + w[3]) / (w[0] + w[2]))
    return EvidenceReport(
        model=ModelKind.BMA,
        log_bf10=log_num - log_den,
        prior_odds=prior_odds,
        pr_re=float(post[2] + post[3]),
        submodel_probs=tuple(float(p) for p in post),
        error_est=4.0 * 1e-6,
    )


def bf_fe_product(
    d: Dataset, effect_prior: EffectPrior, prior_odds: float = 1.0
) -> EvidenceReport:
    """Joint Bayes factor against all study effects being zero.

    Under independent per-study priors the joint Bayes factor is the
    product of single-study Bayes factors; the factors are returned too.
    """
    factors = []
    for study in d.studies:
        sub = Dataset((study,), d.scale)
        rep = bf_ce(sub, effect_prior)
        factors.append(rep.log_bf10)
    return EvidenceReport(
        model=ModelKind.FE,
        log_bf10=float(sum(factors)),
        prior_odds=prior_odds,
        per_study_bf10=tuple(math.exp(f) for f in factors),
        error_est=2.0 * 1e-6 * d.k,
    )


def evidence_report(d: Dataset, spec: ModelSpec, prior_odds: float = 1.0) -> EvidenceReport:
    """Dispatch to the model-specific Bayes factor computation."""
    if spec.kind is ModelKind.CE:
        return bf_ce(d, spec.effect_prior, prior_odds)
    if spec.kind is ModelKind.RE:
        return bf_re(d, spec.effect_prior, spec.het_prior, prior_odds)
    if spec.kind is ModelKind.MAREMA:
        return bf_marema(d, spec.effect_prior, spec.het_prior, prior_odds)
    if spec.kind is ModelKind.BMA:
        return bf_bma(d, spec.effect_prior, spec.het_prior, spec.bma_model_priors or (0.25,) * 4)
    if spec.kind is ModelKind.FE:
        return bf_fe_product(d, spec.effect_prior, prior_odds)
    raise PriorError(f"unknown model kind {spec.kind}")


def minimum_k(spec: ModelSpec) -> int:
    """Smallest prefix length with a well-defined Bayes factor."""
    if spec.kind in (ModelKind.RE, ModelKind.MAREMA):
        assert spec.het_prior is not None
        return spec.het_prior.min_studies
    return 1


def sequential_trajectory(
    d: Dataset,
    spec: ModelSpec,
    alphas: Sequence[float] = ALPHA_THRESHOLDS,
) -> EvidenceTrajectory:
    """Cumulative Bayes factors over prefixes of the (already ordered) studies.

    Every prefix is recomputed from scratch; prefixes below the model's
    minimum number of studies are marked undefined.
    """
    min_k = minimum_k(spec)
    points = []
    for j in range(1, d.k + 1):
        if j < min_k:
            points.append(TrajectoryPoint(j, None))
            continue
        rep = evidence_report(d.prefix(j), spec)
        points.append(TrajectoryPoint(j, rep.log_bf10))
    crossings = {}
    for alpha in alphas:
        if not 0 < alpha < 1:
            raise InvalidAlpha(f"alpha must be in (0,1), got {alpha}")
        threshold = math.log(1.0 / alpha)
        hit = next(
            (p.j for p in points if p.log_bf10 is not None and p.log_bf10 >= threshold),
            None,
        )
        crossings[alpha] = hit
    return EvidenceTrajectory(spec.kind, tuple(points), crossings)


def ce_conditional_log_factors(d: Dataset, sigma02: float) -> list[float]:
    """Per-study conditional log Bayes factors under the CE-normal chain.

    Factor j uses the posterior after studies 1..j-1 as the prior for
    study j (the incremental update), so the telescoping product equals
    the batch Bayes factor.
    """
    post = PosteriorSummary(m=0.0, v2=sigma02)
    out = []
    for s in d.studies:
        log_pred_h1 = float(_log_norm_pdf(s.y, post.m, s.var + post.v2))
        log_pred_h0 = float(_log_norm_pdf(s.y, 0.0, s.var))
        out.append(log_pred_h1 - log_pred_h0)
        post = ce_posterior_update(post, s.y, s.var)
    return out


# Kass-Raftery style qualitative bands on the Bayes factor scale
_EVIDENCE_BANDS = (
    (math.log(3.0), "not worth more than a bare mention"),
    (math.log(20.0), "positive"),
    (math.log(150.0), "strong"),
    (math.inf, "very strong"),
)


def evidence_label(log_bf10: float) -> str:
    """Qualitative reading of a Bayes factor; an annotation, never a decision."""
    mag = abs(log_bf10)
    direction = "H1" if log_bf10 > 0 else "H0"
    for bound, label in _EVIDENCE_BANDS:
        if mag < bound or math.isinf(bound):
            if label == _EVIDENCE_BANDS[0][1]:
                return f"evidence {label}"
            return f"{label} evidence for {direction}"
    return "very strong evidence for " + direction
