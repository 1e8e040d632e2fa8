"""Marginal likelihood evaluation for every model/hypothesis/prior combination.

Three independent routes are provided:

* exact closed forms (common-effect model with a normal prior),
* nested adaptive quadrature (the workhorse): the effect axis is handled
  analytically for normal priors and by Gauss-Kronrod panels otherwise;
  the heterogeneity axis is integrated on a log-transformed grid with
  interval widening until tail contributions are negligible,
* an importance-sampling Monte Carlo oracle for verification.

Improper heterogeneity priors are supported: their arbitrary constant is
tracked through a ``constant_class`` tag so that only ratios in which the
constant cancels can be formed.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from . import _quadrature
from .data import (
    Dataset,
    Hypothesis,
    HypothesisKind,
    HypothesisTarget,
)
from .errors import (
    DegenerateWeights,
    ConstantClassMismatch,
    ImproperPrior,
    ImproperUnderBMA,
    NonFiniteMarginal,
    NonPositiveVariance,
    PriorError,
    PriorNotIndependent,
    QuadratureNotConverged,
)
from .priors import (
    EffectFamily,
    EffectPrior,
    HetFamily,
    HeterogeneityPrior,
    PriorContext,
    Support,
)

LOG_2PI = math.log(2.0 * math.pi)

# Gauss-Hermite rule for the vectorized effect-axis integral
_GH_X, _GH_W = np.polynomial.hermite.hermgauss(201)

#: relative accuracy target for quadrature-based marginals
QUAD_RELTOL = 1e-6
#: tail contribution threshold for widening the heterogeneity interval
TAIL_FRACTION = 1e-8


class ModelKind(enum.Enum):
    CE = "ce"
    RE = "re"
    FE = "fe"
    MAREMA = "marema"
    BMA = "bma"


_TARGET_FOR_KIND = {
    ModelKind.CE: HypothesisTarget.COMMON_EFFECT,
    ModelKind.RE: HypothesisTarget.GLOBAL_MEAN,
    ModelKind.MAREMA: HypothesisTarget.GLOBAL_MEAN,
    ModelKind.BMA: HypothesisTarget.GLOBAL_MEAN,
    ModelKind.FE: HypothesisTarget.ALL_STUDY_EFFECTS,
}


def null_hypothesis(kind: ModelKind) -> Hypothesis:
    return Hypothesis(HypothesisKind.NULL_ZERO, _TARGET_FOR_KIND[kind])


def alternative_hypothesis(kind: ModelKind) -> Hypothesis:
    return Hypothesis(HypothesisKind.TWO_SIDED_ALTERNATIVE, _TARGET_FOR_KIND[kind])


@dataclass(frozen=True)
class ModelSpec:
    """Model kind plus the priors it needs."""

    kind: ModelKind
    effect_prior: EffectPrior
    het_prior: Optional[HeterogeneityPrior] = None
    bma_model_priors: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        needs_het = self.kind in (ModelKind.RE, ModelKind.MAREMA, ModelKind.BMA)
        if needs_het and self.het_prior is None:
            raise PriorError(f"{self.kind.value} model requires a heterogeneity prior")
        if not needs_het and self.het_prior is not None:
            raise PriorError(f"{self.kind.value} model takes no heterogeneity prior")
        if self.kind is ModelKind.BMA:
            assert self.het_prior is not None
            if not self.het_prior.proper:
                raise ImproperUnderBMA(
                    "model averaging requires a proper heterogeneity prior; "
                    f"got the improper {self.het_prior.family.value} prior"
                )
            if self.bma_model_priors is not None:
                probs = np.asarray(self.bma_model_priors, dtype=float)
                if probs.shape != (4,) or np.any(probs < 0) or probs.sum() <= 0:
                    raise PriorError(
                        "bma_model_priors must be four nonnegative weights with positive sum"
                    )
        elif self.bma_model_priors is not None:
            raise PriorError("bma_model_priors only apply to the BMA model")

    @property
    def support(self) -> Support:
        return Support.MAREMA if self.kind is ModelKind.MAREMA else Support.RE

    @property
    def constant_class(self) -> str:
        if self.het_prior is None or self.kind is ModelKind.CE or self.kind is ModelKind.FE:
            return "none"
        return self.het_prior.constant_class


@dataclass(frozen=True)
class LogMarginal:
    """Log marginal likelihood, tagged with the improper-prior constant it carries."""

    value: float
    constant_class: str = "none"

    def __sub__(self, other: "LogMarginal") -> float:
        if self.constant_class != other.constant_class:
            raise ConstantClassMismatch(
                f"cannot subtract log marginals carrying different improper-prior "
                f"constants ({self.constant_class!r} vs {other.constant_class!r})"
            )
        return self.value - other.value


class PosteriorSummary(NamedTuple):
    """Conjugate normal posterior (common-effect model, normal prior)."""

    m: float
    v2: float


class CEClosedForm(NamedTuple):
    b01: float
    b10: float
    log_b01: float


# ---------------------------------------------------------------------------
# likelihood primitives
# ---------------------------------------------------------------------------

def loglik_given_params(d: Dataset, mu: float, tau2: float = 0.0) -> float:
    """Sum of study log densities under y_i ~ N(mu, sigma_i^2 + tau2)."""
    total = np.asarray(d.variances) + tau2
    if np.any(total <= 0):
        raise NonPositiveVariance(
            f"tau2={tau2} makes some sampling variance nonpositive (sigma2_min={d.sigma2_min})"
        )
    resid = np.asarray(d.y) - mu
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * total) + resid * resid / total))


def _decompose(d: Dataset, omega, shift: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Write the likelihood in mu as C(tau2) * N(mu | muhat, v).

    ``tau2 = shift + omega``; the study totals are formed as
    (sigma_i^2 + shift) + omega, which stays exact on the marema axis
    (shift = -sigma2_min) where tau2 itself cancels near the bound.
    Returns (muhat, v, logC), vectorized over omega.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    variances = np.asarray(d.variances)
    ys = np.asarray(d.y)
    total = (variances + shift)[None, :] + omega[:, None]
    if np.any(total <= 0):
        raise NonPositiveVariance("sigma_i^2 + tau2 must stay positive")
    w = 1.0 / total
    wsum = np.sum(w, axis=1)
    muhat = np.sum(w * ys[None, :], axis=1) / wsum
    v = 1.0 / wsum
    resid = ys[None, :] - muhat[:, None]
    log_at_mode = -0.5 * np.sum(np.log(2.0 * np.pi * total) + resid * resid * w, axis=1)
    logc = log_at_mode + 0.5 * (LOG_2PI + np.log(v))
    return muhat, v, logc


def _log_norm_pdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


# ---------------------------------------------------------------------------
# common effect model: closed forms
# ---------------------------------------------------------------------------

def analytic_ce_posterior(d: Dataset, sigma02: float) -> PosteriorSummary:
    """Conjugate posterior of theta under the CE model with a N(0, sigma02) prior."""
    if sigma02 <= 0:
        raise PriorError(f"prior variance must be > 0, got {sigma02}")
    variances = np.asarray(d.variances)
    ys = np.asarray(d.y)
    precision = 1.0 / sigma02 + float(np.sum(1.0 / variances))
    m = float(np.sum(ys / variances)) / precision
    return PosteriorSummary(m=m, v2=1.0 / precision)


def ce_posterior_update(post: PosteriorSummary, y: float, sigma2: float) -> PosteriorSummary:
    """One-study sequential update of the conjugate CE posterior."""
    precision = 1.0 / sigma2 + 1.0 / post.v2
    m = (y / sigma2 + post.m / post.v2) / precision
    return PosteriorSummary(m=m, v2=1.0 / precision)


def analytic_ce_bf01_normal(d: Dataset, sigma02: float) -> CEClosedForm:
    """Closed-form B01 under the CE model with a N(0, sigma02) effect prior."""
    post = analytic_ce_posterior(d, sigma02)
    log_b01 = 0.5 * math.log(sigma02) - 0.5 * math.log(post.v2) - post.m**2 / (2.0 * post.v2)
    return CEClosedForm(b01=math.exp(log_b01), b10=math.exp(-log_b01), log_b01=log_b01)


# ---------------------------------------------------------------------------
# effect-axis integral
# ---------------------------------------------------------------------------

def _graded_offsets(scale: float, reach: float) -> np.ndarray:
    """Symmetric breakpoints 0, +-scale, +-2 scale, ... doubling out to reach."""
    offs = [0.0]
    step = scale
    while step < reach:
        offs.extend((step, -step))
        step *= 2.0
    return np.asarray(offs)


def _log_inner_mu(
    d: Dataset,
    omega,
    prior: EffectPrior,
    shift: float = 0.0,
    *,
    mu_halfwidth: float = 15.0,
) -> np.ndarray:
    """log integral over the effect of likelihood x prior, at tau2 = shift + omega.

    Vectorized over omega. Normal (and unit-information) priors integrate
    analytically; other families go through adaptive panels centered on
    the Gaussian likelihood core with breakpoints at both the likelihood
    and prior scales.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    muhat, v, logc = _decompose(d, omega, shift)

    if prior.family is EffectFamily.NORMAL:
        s2 = prior.scale**2  # type: ignore[operator]
        return logc + _log_norm_pdf(muhat, prior.location, v + s2)
    if prior.family is EffectFamily.UNIT_INFORMATION:
        out = np.empty_like(muhat)
        for i, om in enumerate(omega):
            tau2 = None if (shift == 0.0 and om == 0.0) else float(shift + om)
            s2 = prior.normal_variance(PriorContext(d, tau2))
            out[i] = logc[i] + _log_norm_pdf(muhat[i], 0.0, v[i] + s2)
        return out

    # Gauss-Hermite handles the common regime where the Gaussian likelihood
    # is no wider than the prior (checked accurate to < 1e-11 relative);
    # wider likelihoods fall back to adaptive panels with breakpoints.
    out = np.empty_like(muhat)
    sd = np.sqrt(v)
    pscale = prior.scale or 1.0
    narrow = sd <= 1.5 * pscale
    if np.any(narrow):
        nodes = muhat[narrow, None] + math.sqrt(2.0) * sd[narrow, None] * _GH_X[None, :]
        lp = prior.logpdf(nodes)
        m = np.max(lp, axis=1)
        out[narrow] = (
            logc[narrow]
            + m
            + np.log(np.sum(_GH_W[None, :] * np.exp(lp - m[:, None]), axis=1))
            - 0.5 * math.log(math.pi)
        )
    for i in np.nonzero(~narrow)[0]:
        out[i] = _inner_mu_quadrature(muhat[i], v[i], logc[i], prior, mu_halfwidth)
    return out


def _inner_mu_quadrature(
    muhat: float, v: float, logc: float, prior: EffectPrior, halfwidth: float
) -> float:
    sd = math.sqrt(v)
    pscale = prior.scale or 1.0
    if sd < 1e-7 * pscale:
        # likelihood is a delta spike on the prior's scale: Laplace limit,
        # relative error O(v / pscale^2) < 1e-14
        return logc + float(prior.logpdf(muhat))
    lo = muhat - halfwidth * sd
    hi = muhat + halfwidth * sd
    pts = muhat + _graded_offsets(sd, halfwidth * sd)
    pscale = prior.scale or 1.0
    prior_pts = prior.location + _graded_offsets(pscale, hi - lo)
    pts = np.concatenate([pts, prior_pts])
    pts = np.unique(pts[(pts > lo) & (pts < hi)])

    # shift by the max over probe points to keep exp() in range
    probes = np.concatenate([[lo, hi], pts])
    log_f = _log_norm_pdf(probes, muhat, v) + prior.logpdf(probes)
    shift = float(np.max(log_f))
    if not np.isfinite(shift):
        raise NonFiniteMarginal("effect-axis integrand is nowhere finite")

    def f(x):
        return np.exp(_log_norm_pdf(x, muhat, v) + prior.logpdf(x) - shift)

    res = _quadrature.integrate(f, lo, hi, points=pts, epsrel=1e-9)
    achieved = res.error / res.value if res.value > 0 else math.inf
    if res.value <= 0 or achieved > 1e-7:
        raise QuadratureNotConverged(
            f"effect-axis quadrature did not reach {QUAD_RELTOL} "
            f"(achieved {achieved:.2e})",
            achieved=achieved,
        )
    return logc + shift + math.log(res.value)


def _log_h0_given_tau2(d: Dataset, omega, shift: float = 0.0) -> np.ndarray:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    muhat, v, logc = _decompose(d, omega, shift)
    return logc + _log_norm_pdf(0.0, muhat, v)


# ---------------------------------------------------------------------------
# heterogeneity-axis integral
# ---------------------------------------------------------------------------

def _outer_log_integral(
    d: Dataset,
    het: HeterogeneityPrior,
    support: Support,
    log_inner,
    *,
    tau2_upper: Optional[float] = None,
    tau2_lower: Optional[float] = None,
    debug_dump: Optional[str] = None,
) -> float:
    """log of the integral over tau2 of exp(log_inner(tau2)) * p(tau2).

    The tau2 axis is mapped to u with tau2 = shift + e^u (shift = 0 for the
    RE support, -sigma2_min for marema) and integrated adaptively on u; the
    interval is widened until both tail contributions fall below
    TAIL_FRACTION of the running total. ``tau2_lower``/``tau2_upper``
    restrict the integration range (used for truncated-oracle comparisons
    and for posterior mass splits).
    """
    shift = 0.0 if support is Support.RE else -d.sigma2_min

    def h(u):
        u = np.asarray(u, dtype=float)
        omega = np.exp(u)
        return log_inner(omega) + het.logpdf_excess(omega, d, support) + u

    scale_ref = float(np.median(np.asarray(d.variances)))
    u_min_hard = math.log(d.sigma2_min) - 60.0
    u_max_hard = math.log(scale_ref) + 80.0
    if tau2_upper is not None:
        if tau2_upper <= shift:
            raise ValueError("tau2_upper must exceed the lower support bound")
        u_max_hard = min(u_max_hard, math.log(tau2_upper - shift))
    if tau2_lower is not None and tau2_lower - shift > 0:
        u_min_hard = max(u_min_hard, math.log(tau2_lower - shift))
    if u_min_hard >= u_max_hard:
        raise ValueError("empty tau2 integration range")

    grid = np.linspace(u_min_hard, u_max_hard, 241)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        hg = h(grid)
    hg = np.where(np.isfinite(hg), hg, -np.inf)
    hmax = float(np.max(hg))
    if not np.isfinite(hmax):
        raise NonFiniteMarginal("heterogeneity integrand vanishes everywhere on the scan grid")

    # region where the integrand is within e^-45 of its peak
    keep = np.where(hg > hmax - 45.0)[0]
    u_lo = grid[max(keep[0] - 1, 0)]
    u_hi = grid[min(keep[-1] + 1, grid.size - 1)]

    # divergence guard: a plateau or growth at the top of the scan range
    # signals a non-integrable tail (too few studies for this prior)
    if keep[-1] >= grid.size - 2 and tau2_upper is None:
        tail_slope = hg[-1] - hg[-9]
        if tail_slope > -1.0:
            raise NonFiniteMarginal(
                f"heterogeneity integral does not decay for k={d.k} under the "
                f"{het.family.value} prior (needs k >= {het.min_studies})"
            )

    sing = []
    if het.family is HetFamily.UNIFORM_TAU and support is Support.MAREMA:
        # removable singularity of 1/sqrt|tau2| at tau2 = 0: split there
        u0 = math.log(d.sigma2_min)
        if u_lo < u0 < u_hi:
            sing.append(u0)

    def f(u):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
            val = np.exp(np.clip(h(u) - hmax, -745.0, 50.0))
        return np.where(np.isfinite(val), val, 0.0)

    total = 0.0
    achieved = math.inf
    for _round in range(6):
        pts = [p for p in sing if u_lo < p < u_hi]
        res = _quadrature.integrate(f, u_lo, u_hi, points=pts, epsrel=1e-9)
        achieved = res.error / res.value if res.value > 0 else math.inf
        if res.value <= 0 or achieved > 1e-7:
            raise QuadratureNotConverged(
                f"heterogeneity-axis quadrature did not reach {QUAD_RELTOL} "
                f"(achieved {achieved:.2e})",
                achieved=achieved,
            )
        total = res.value
        achieved = res.error / total
        lo_tail = 0.0
        hi_tail = 0.0
        if u_lo > u_min_hard:
            lo_res = _quadrature.integrate(f, max(u_min_hard, u_lo - 15.0), u_lo, epsrel=1e-6)
            lo_tail = max(lo_res.value, 0.0)
        if u_hi < u_max_hard:
            hi_res = _quadrature.integrate(f, u_hi, min(u_max_hard, u_hi + 15.0), epsrel=1e-6)
            hi_tail = max(hi_res.value, 0.0)
        if lo_tail <= TAIL_FRACTION * total and hi_tail <= TAIL_FRACTION * total:
            total += lo_tail + hi_tail
            break
        if lo_tail > TAIL_FRACTION * total:
            u_lo = max(u_min_hard, u_lo - 15.0)
        if hi_tail > TAIL_FRACTION * total:
            u_hi = min(u_max_hard, u_hi + 15.0)
    else:
        raise QuadratureNotConverged(
            "heterogeneity interval widening did not stabilize", achieved=achieved
        )

    if debug_dump:
        us = np.linspace(u_lo, u_hi, 513)
        with open(debug_dump, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["u", "tau2", "log_integrand"])
            for u, val in zip(us, h(us)):
                writer.writerow([repr(float(u)), repr(float(shift + math.exp(u))), repr(float(val))])

    return hmax + math.log(total)


# ---------------------------------------------------------------------------
# the master marginal
# ---------------------------------------------------------------------------

def _check_hypothesis(spec: ModelSpec, h: Hypothesis) -> bool:
    if h.target is not _TARGET_FOR_KIND[spec.kind]:
        raise PriorError(
            f"hypothesis target {h.target.value} does not match the {spec.kind.value} model"
        )
    return h.kind is HypothesisKind.NULL_ZERO


def log_marginal(
    d: Dataset,
    spec: ModelSpec,
    h: Hypothesis,
    *,
    tau2_upper: Optional[float] = None,
    debug_dump: Optional[str] = None,
) -> LogMarginal:
    """Log marginal likelihood of the data under one hypothesis of one model."""
    is_null = _check_hypothesis(spec, h)
    kind = spec.kind
    prior = spec.effect_prior

    if kind is ModelKind.CE:
        if is_null:
            return LogMarginal(loglik_given_params(d, 0.0, 0.0))
        if prior.family is EffectFamily.NORMAL and prior.location == 0.0:
            # closed form: subtract log B01 from the null marginal
            cf = analytic_ce_bf01_normal(d, prior.scale**2)  # type: ignore[operator]
            return LogMarginal(loglik_given_params(d, 0.0, 0.0) - cf.log_b01)
        if prior.family is EffectFamily.UNIT_INFORMATION:
            s2 = prior.normal_variance(PriorContext(d))
            muhat, v, logc = _decompose(d, 0.0)
            return LogMarginal(float(logc[0] + _log_norm_pdf(muhat[0], 0.0, v[0] + s2)))
        return LogMarginal(float(_log_inner_mu(d, 0.0, prior)[0]))

    if kind is ModelKind.FE:
        total = 0.0
        for study in d.studies:
            sub = Dataset((study,), d.scale)
            total += log_marginal(sub, ModelSpec(ModelKind.CE, prior), _ce_hyp(is_null)).value
        return LogMarginal(total)

    if kind in (ModelKind.RE, ModelKind.MAREMA):
        het = spec.het_prior
        assert het is not None
        if d.k < het.min_studies:
            raise NonFiniteMarginal(
                f"the {het.family.value} prior needs at least {het.min_studies} studies "
                f"for a finite marginal; got k={d.k}"
            )
        shift = 0.0 if spec.support is Support.RE else -d.sigma2_min
        if is_null:
            log_inner = lambda om: _log_h0_given_tau2(d, om, shift)  # noqa: E731
        else:
            log_inner = lambda om: _log_inner_mu(d, om, prior, shift)  # noqa: E731
        value = _outer_log_integral(
            d, het, spec.support, log_inner, tau2_upper=tau2_upper, debug_dump=debug_dump
        )
        if not math.isfinite(value):
            raise NonFiniteMarginal(f"non-finite log marginal for {kind.value}")
        return LogMarginal(value, spec.constant_class)

    raise PriorError(f"log_marginal does not handle the {kind.value} model directly")


def _ce_hyp(is_null: bool) -> Hypothesis:
    return null_hypothesis(ModelKind.CE) if is_null else alternative_hypothesis(ModelKind.CE)


def posterior_tau2_mass_above(
    d: Dataset, spec: ModelSpec, threshold: float = 0.0
) -> float:
    """Posterior probability that tau2 exceeds ``threshold`` under H1.

    For the marema model this is the heterogeneity check Pr(tau2 > 0);
    defined for RE as well (where it is 1 at threshold 0).
    """
    if spec.kind not in (ModelKind.RE, ModelKind.MAREMA):
        raise PriorError("tau2 posterior mass requires an RE-type model")
    het = spec.het_prior
    assert het is not None
    shift = 0.0 if spec.support is Support.RE else -d.sigma2_min
    log_inner = lambda om: _log_inner_mu(d, om, spec.effect_prior, shift)  # noqa: E731
    log_full = _outer_log_integral(d, het, spec.support, log_inner)
    log_above = _outer_log_integral(
        d, het, spec.support, log_inner, tau2_lower=threshold
    )
    return float(np.exp(min(log_above - log_full, 0.0)))


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    log_value: float
    rel_se: float  # standard error of the estimate / estimate ~ se of the log
    ess: float
    draws: int
    tau2_upper: Optional[float] = None

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _reduce_log_weights(logw: np.ndarray, draws: int, tau2_upper=None) -> OracleResult:
    logw = np.where(np.isfinite(logw), logw, -np.inf)
    shift = float(np.max(logw))
    if not math.isfinite(shift):
        raise DegenerateWeights("all importance weights underflowed")
    w = np.exp(logw - shift)
    mean = float(np.mean(w))
    sd = float(np.std(w))
    ess = float(np.sum(w)) ** 2 / float(np.sum(w * w))
    if ess < 0.01 * draws:
        raise DegenerateWeights(
            f"effective sample size {ess:.0f} below 1% of {draws} draws"
        )
    rel_se = sd / (mean * math.sqrt(draws))
    return OracleResult(shift + math.log(mean), rel_se, ess, draws, tau2_upper)


def _grid_proposal(
    edges: np.ndarray,
    log_target_mid: np.ndarray,
    log_prior_mid: np.ndarray,
    draws: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample from a piecewise-constant density on a 1-D grid.

    Panel masses are a 50/50 defensive mixture of the (rough) target shape
    and the prior-only shape, so importance weights stay bounded even where
    the likelihood shaping is off. Returns draws and exact log q values.
    """
    widths = np.diff(edges)

    def _norm(logm):
        m = np.exp(logm - np.max(logm))
        return m / m.sum()

    mass = 0.5 * _norm(log_target_mid + np.log(widths)) + 0.5 * _norm(
        log_prior_mid + np.log(widths)
    )
    mass /= mass.sum()
    idx = rng.choice(mass.size, size=draws, p=mass)
    x = edges[idx] + widths[idx] * rng.uniform(size=draws)
    log_q = np.log(mass[idx]) - np.log(widths[idx])
    return x, log_q


def _sample_omega_proposal(
    het: HeterogeneityPrior,
    d: Dataset,
    support: Support,
    draws: int,
    rng: np.random.Generator,
    tau2_upper: Optional[float],
    log_profile,
) -> tuple[np.ndarray, np.ndarray]:
    """Draws of omega = tau2 - lower_bound plus log p(tau2) - log q correction.

    ``log_profile(omega)`` gives the rough likelihood shape used to place
    proposal mass; it only affects variance, never the estimate.
    """
    lower = 0.0 if support is Support.RE else -d.sigma2_min
    if het.family is HetFamily.INV_GAMMA_TAU:
        return het.sample_tau2(draws, rng), np.zeros(draws)
    if tau2_upper is None:
        raise ImproperPrior(
            "the Monte Carlo oracle needs an explicit tau2_upper truncation bound "
            f"for the improper {het.family.value} prior"
        )

    if het.family is HetFamily.UNIFORM_TAU and support is Support.MAREMA:
        # on the signed-root axis s the prior measure 1/sqrt|tau2| d tau2
        # becomes the flat 2 ds, which removes the tau2=0 singularity
        s_min = math.sqrt(-lower)
        s_edges = np.linspace(-s_min, math.sqrt(tau2_upper), 2049)
        mids = 0.5 * (s_edges[:-1] + s_edges[1:])
        omega_of = lambda s: np.where(  # noqa: E731
            s < 0, (s_min - np.abs(s)) * (s_min + np.abs(s)), s * s + s_min * s_min
        )
        s, log_q = _grid_proposal(s_edges, log_profile(omega_of(mids)), np.zeros(mids.size), draws, rng)
        return omega_of(s), math.log(2.0) - log_q

    # all remaining improper families: piecewise proposal on the log axis
    u_lo = math.log(d.sigma2_min) - 25.0
    u_hi = math.log(tau2_upper - lower)
    edges = np.linspace(u_lo, u_hi, 2049)
    mids = 0.5 * (edges[:-1] + edges[1:])
    log_prior_u = het.logpdf_excess(np.exp(mids), d, support) + mids
    log_target_u = log_prior_u + log_profile(np.exp(mids))
    u, log_q_u = _grid_proposal(edges, log_target_u, log_prior_u, draws, rng)
    omega = np.exp(u)
    log_p_u = het.logpdf_excess(omega, d, support) + u
    return omega, log_p_u - log_q_u


def _loglik_matrix(d: Dataset, mu: np.ndarray, omega: np.ndarray, shift: float = 0.0) -> np.ndarray:
    variances = np.asarray(d.variances)
    ys = np.asarray(d.y)
    total = (variances + shift)[None, :] + np.atleast_1d(omega)[:, None]
    resid = ys[None, :] - np.atleast_1d(mu)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -0.5 * np.sum(np.log(2.0 * np.pi * total) + resid * resid / total, axis=1)
    return np.where(np.all(total > 0, axis=1), out, -np.inf)


def mc_marginal_oracle(
    d: Dataset,
    spec: ModelSpec,
    h: Hypothesis,
    draws: int,
    rng: np.random.Generator,
    *,
    tau2_upper: Optional[float] = None,
) -> OracleResult:
    """Importance-sampling estimate of the (possibly truncated) marginal.

    Kept independent of the quadrature path: only the likelihood and the
    prior densities are shared. For improper heterogeneity priors the
    support is truncated at ``tau2_upper``; pass the same bound to
    ``log_marginal`` when comparing the two routes.
    """
    is_null = _check_hypothesis(spec, h)
    kind = spec.kind
    prior = spec.effect_prior

    if kind is ModelKind.CE:
        if is_null:
            return OracleResult(loglik_given_params(d, 0.0, 0.0), 0.0, float(draws), draws)
        theta = prior.sample(draws, rng, PriorContext(d))
        logw = _loglik_matrix(d, theta, np.zeros(draws))
        return _reduce_log_weights(logw, draws)

    if kind is ModelKind.FE:
        if is_null:
            return OracleResult(loglik_given_params(d, 0.0, 0.0), 0.0, float(draws), draws)
        log_total, var_total, ess_min = 0.0, 0.0, math.inf
        for study in d.studies:
            sub = Dataset((study,), d.scale)
            res = mc_marginal_oracle(
                sub, ModelSpec(ModelKind.CE, prior), _ce_hyp(False), draws, rng
            )
            log_total += res.log_value
            var_total += res.rel_se**2
            ess_min = min(ess_min, res.ess)
        return OracleResult(log_total, math.sqrt(var_total), ess_min, draws)

    if kind in (ModelKind.RE, ModelKind.MAREMA):
        het = spec.het_prior
        assert het is not None
        shift = 0.0 if spec.support is Support.RE else -d.sigma2_min

        def log_profile(omega):
            # rough likelihood shape along tau2 for proposal placement only
            muhat, v, logc = _decompose(d, omega, shift)
            mu_at = np.zeros_like(muhat) if is_null else muhat
            return logc + _log_norm_pdf(mu_at, muhat, v)

        omega, log_corr = _sample_omega_proposal(
            het, d, spec.support, draws, rng, tau2_upper, log_profile
        )
        if is_null:
            mu = np.zeros(draws)
        elif prior.depends_on_tau2:
            sds = np.array(
                [
                    math.sqrt(prior.normal_variance(PriorContext(d, float(shift + om))))
                    for om in omega
                ]
            )
            mu = rng.standard_normal(draws) * sds
        else:
            mu = prior.sample(draws, rng, PriorContext(d))
        logw = _loglik_matrix(d, mu, omega, shift) + log_corr
        bound = tau2_upper if not het.proper else None
        return _reduce_log_weights(logw, draws, bound)

    raise PriorError(f"no Monte Carlo oracle for the {kind.value} model")


# ---------------------------------------------------------------------------
# Savage-Dickey density ratio
# ---------------------------------------------------------------------------

def savage_dickey_bf01(d: Dataset, spec: ModelSpec) -> float:
    """B01 as posterior over prior ordinate of the effect at zero under H1.

    Requires the effect prior to be independent of tau2, so the
    unit-information prior is rejected under RE-type models.
    """
    prior = spec.effect_prior
    kind = spec.kind

    if kind is ModelKind.CE:
        if prior.family is EffectFamily.NORMAL and prior.location == 0.0:
            post = analytic_ce_posterior(d, prior.scale**2)  # type: ignore[operator]
            log_post0 = _log_norm_pdf(0.0, post.m, post.v2)
            log_prior0 = _log_norm_pdf(0.0, 0.0, prior.scale**2)  # type: ignore[operator]
            return float(np.exp(log_post0 - log_prior0))
        if prior.family is EffectFamily.UNIT_INFORMATION:
            post = analytic_ce_posterior(d, prior.normal_variance(PriorContext(d)))
            log_post0 = _log_norm_pdf(0.0, post.m, post.v2)
            log_prior0 = _log_norm_pdf(0.0, 0.0, prior.normal_variance(PriorContext(d)))
            return float(np.exp(log_post0 - log_prior0))
        m1 = log_marginal(d, spec, alternative_hypothesis(kind)).value
        log_post0 = loglik_given_params(d, 0.0, 0.0) + float(prior.logpdf(0.0)) - m1
        return float(np.exp(log_post0 - float(prior.logpdf(0.0))))

    if kind in (ModelKind.RE, ModelKind.MAREMA):
        if prior.depends_on_tau2:
            raise PriorNotIndependent(
                "Savage-Dickey requires an effect prior independent of tau2; "
                "the unit-information prior is conditional on tau2 here"
            )
        het = spec.het_prior
        assert het is not None
        if d.k < het.min_studies:
            raise NonFiniteMarginal(
                f"the {het.family.value} prior needs at least {het.min_studies} studies"
            )
        shift = 0.0 if spec.support is Support.RE else -d.sigma2_min
        log_m1 = _outer_log_integral(
            d, het, spec.support, lambda om: _log_inner_mu(d, om, prior, shift)
        )
        if prior.family is EffectFamily.NORMAL:
            s2 = prior.scale**2  # type: ignore[operator]
            loc = prior.location

            def log_joint_ordinate(om):
                # conditional-normal posterior ordinate at 0 times the tau2
                # posterior weight I(tau2) p(tau2) (up to the common constant)
                muhat, v, logc = _decompose(d, om, shift)
                w2 = 1.0 / (1.0 / s2 + 1.0 / v)
                m = w2 * (muhat / v + loc / s2)
                log_inner = logc + _log_norm_pdf(muhat, loc, v + s2)
                return _log_norm_pdf(0.0, m, w2) + log_inner

            log_num = _outer_log_integral(d, het, spec.support, log_joint_ordinate)
            log_post0 = log_num - log_m1
        else:
            log_m0 = _outer_log_integral(
                d, het, spec.support, lambda om: _log_h0_given_tau2(d, om, shift)
            )
            log_post0 = log_m0 + float(prior.logpdf(0.0)) - log_m1
        return float(np.exp(log_post0 - float(prior.logpdf(0.0))))

    raise PriorError(f"Savage-Dickey is not defined for the {kind.value} model")
