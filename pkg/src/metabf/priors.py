"""Priors on the (average) effect and on the between-study heterogeneity.

Effect priors are always proper. Heterogeneity priors may be improper
(uniform on tau^2, uniform on tau, Berger-Deely); improper densities are
unnormalized and carry an arbitrary constant, so any quantity built from
them must be a ratio in which that constant cancels.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .data import Dataset
from .errors import (
    FitDiverged,
    ImproperPrior,
    MissingContext,
    MissingSampleSizes,
    NoDefaultForScale,
    OutOfRange,
    OutsideSupport,
    PriorError,
)
from .data import Scale


class Support(enum.Enum):
    """Declared support of the heterogeneity parameter tau^2."""

    RE = "re"          # tau^2 > 0
    MAREMA = "marema"  # tau^2 > -sigma2_min


# ---------------------------------------------------------------------------
# effect priors
# ---------------------------------------------------------------------------

class EffectFamily(enum.Enum):
    NORMAL = "normal"
    STUDENT_T = "student_t"
    CAUCHY = "cauchy"
    LOGISTIC = "logistic"
    UNIT_INFORMATION = "unit_information"


@dataclass(frozen=True)
class PriorContext:
    """Dataset (for sample sizes) and, under RE-type models, the current tau^2."""

    dataset: Dataset
    tau2: Optional[float] = None


@dataclass(frozen=True)
class EffectPrior:
    """Proper prior on the tested effect (theta under CE, mu otherwise)."""

    family: EffectFamily
    location: float = 0.0
    scale: Optional[float] = None
    df: Optional[float] = None

    def __post_init__(self):
        if self.family is EffectFamily.UNIT_INFORMATION:
            if self.scale is not None or self.df is not None:
                raise PriorError("unit-information prior takes no scale or df")
            return
        if self.scale is None or self.scale <= 0:
            raise PriorError(f"{self.family.value} prior needs scale > 0, got {self.scale}")
        if self.family is EffectFamily.STUDENT_T:
            if self.df is None or self.df <= 0:
                raise PriorError(f"student_t prior needs df > 0, got {self.df}")
        elif self.df is not None:
            raise PriorError(f"{self.family.value} prior takes no df")

    # constructors ---------------------------------------------------------
    @classmethod
    def normal(cls, mean: float = 0.0, sd: float = 1.0) -> "EffectPrior":
        return cls(EffectFamily.NORMAL, mean, sd)

    @classmethod
    def student_t(cls, location: float, scale: float, df: float) -> "EffectPrior":
        return cls(EffectFamily.STUDENT_T, location, scale, df)

    @classmethod
    def cauchy(cls, location: float = 0.0, scale: float = 1.0) -> "EffectPrior":
        return cls(EffectFamily.CAUCHY, location, scale)

    @classmethod
    def logistic(cls, location: float = 0.0, scale: float = 0.5) -> "EffectPrior":
        return cls(EffectFamily.LOGISTIC, location, scale)

    @classmethod
    def unit_information(cls) -> "EffectPrior":
        return cls(EffectFamily.UNIT_INFORMATION)

    # properties -----------------------------------------------------------
    @property
    def proper(self) -> bool:
        return True

    @property
    def depends_on_tau2(self) -> bool:
        return self.family is EffectFamily.UNIT_INFORMATION

    def is_normal(self) -> bool:
        return self.family in (EffectFamily.NORMAL, EffectFamily.UNIT_INFORMATION)

    def normal_variance(self, ctx: Optional[PriorContext] = None) -> float:
        """Variance of the (conditionally) normal prior; errors otherwise."""
        if self.family is EffectFamily.NORMAL:
            return self.scale * self.scale  # type: ignore[operator]
        if self.family is EffectFamily.UNIT_INFORMATION:
            return unit_information_variance(ctx)
        raise PriorError(f"{self.family.value} prior is not normal")

    def _frozen(self, ctx: Optional[PriorContext] = None):
        f = self.family
        if f is EffectFamily.NORMAL:
            return stats.norm(self.location, self.scale)
        if f is EffectFamily.STUDENT_T:
            return stats.t(self.df, loc=self.location, scale=self.scale)
        if f is EffectFamily.CAUCHY:
            return stats.cauchy(self.location, self.scale)
        if f is EffectFamily.LOGISTIC:
            return stats.logistic(self.location, self.scale)
        if f is EffectFamily.UNIT_INFORMATION:
            return stats.norm(0.0, math.sqrt(unit_information_variance(ctx)))
        raise PriorError(f"unhandled family {f}")

    # evaluation -----------------------------------------------------------
    def logpdf(self, x, ctx: Optional[PriorContext] = None):
        return self._frozen(ctx).logpdf(x)

    def pdf(self, x, ctx: Optional[PriorContext] = None):
        return self._frozen(ctx).pdf(x)

    def ppf(self, q, ctx: Optional[PriorContext] = None):
        return self._frozen(ctx).ppf(q)

    def sample(self, count: int, rng: np.random.Generator, ctx: Optional[PriorContext] = None) -> np.ndarray:
        if count < 1:
            raise PriorError(f"sample count must be >= 1, got {count}")
        return np.asarray(self._frozen(ctx).rvs(size=count, random_state=rng))

    def describe(self) -> str:
        f = self.family
        if f is EffectFamily.UNIT_INFORMATION:
            return "unit_information"
        if f is EffectFamily.STUDENT_T:
            return f"student_t({self.location:g}, {self.scale:g}, df={self.df:g})"
        return f"{f.value}({self.location:g}, {self.scale:g})"


def unit_information_variance(ctx: Optional[PriorContext]) -> float:
    """Prior variance carrying the information of one observation.

    CE form (tau2 is None): N / sum(1/sigma_i^2).
    RE/marema form: N / sum(1/(sigma_i^2 + tau2)).
    """
    if ctx is None:
        raise MissingContext("unit-information prior needs a dataset context")
    d = ctx.dataset
    if d.total_n is None:
        raise MissingSampleSizes("unit-information prior needs n for every study")
    variances = np.asarray(d.variances)
    if ctx.tau2 is None:
        precision = float(np.sum(1.0 / variances))
    else:
        total = variances + ctx.tau2
        if np.any(total <= 0):
            raise OutsideSupport(f"tau2={ctx.tau2} leaves a nonpositive sampling variance")
        precision = float(np.sum(1.0 / total))
    return d.total_n / precision


def default_effect_prior(scale: Scale) -> EffectPrior:
    """Default prior on the global effect for a given analysis scale."""
    if scale is Scale.SMD:
        return EffectPrior.normal(0.0, 1.0)
    if scale is Scale.LOG_ODDS:
        return EffectPrior.student_t(0.0, 2.35, 13.0)
    if scale is Scale.FISHER_Z:
        return EffectPrior.logistic(0.0, 0.5)
    raise NoDefaultForScale(f"no default effect prior for scale {scale.value!r}")


def effect_prior_density(prior: EffectPrior, x, ctx: Optional[PriorContext] = None):
    return prior.pdf(x, ctx)


def sample_effect_prior(
    prior: EffectPrior, count: int, rng: np.random.Generator, ctx: Optional[PriorContext] = None
) -> np.ndarray:
    return prior.sample(count, rng, ctx)


# ---------------------------------------------------------------------------
# heterogeneity priors
# ---------------------------------------------------------------------------

class HetFamily(enum.Enum):
    UNIFORM_TAU2 = "uniform_tau2"
    UNIFORM_TAU = "uniform_tau"
    BERGER_DEELY = "berger_deely"
    INV_GAMMA_TAU = "inv_gamma_tau"


#: minimal number of studies for a finite Bayes factor, per improper family
MIN_STUDIES = {
    HetFamily.UNIFORM_TAU2: 3,
    HetFamily.UNIFORM_TAU: 2,
    HetFamily.BERGER_DEELY: 2,
    HetFamily.INV_GAMMA_TAU: 1,
}


@dataclass(frozen=True)
class HeterogeneityPrior:
    """Prior on tau^2; improper families are unnormalized by construction."""

    family: HetFamily
    shape: Optional[float] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if self.family is HetFamily.INV_GAMMA_TAU:
            if self.shape is None or self.shape <= 0 or self.scale is None or self.scale <= 0:
                raise PriorError(
                    f"inverse-gamma prior needs shape > 0 and scale > 0, got ({self.shape}, {self.scale})"
                )
        elif self.shape is not None or self.scale is not None:
            raise PriorError(f"{self.family.value} prior takes no parameters")

    @classmethod
    def uniform_tau2(cls) -> "HeterogeneityPrior":
        return cls(HetFamily.UNIFORM_TAU2)

    @classmethod
    def uniform_tau(cls) -> "HeterogeneityPrior":
        return cls(HetFamily.UNIFORM_TAU)

    @classmethod
    def berger_deely(cls) -> "HeterogeneityPrior":
        return cls(HetFamily.BERGER_DEELY)

    @classmethod
    def inv_gamma_tau(cls, shape: float = 1.0, scale: float = 0.15) -> "HeterogeneityPrior":
        return cls(HetFamily.INV_GAMMA_TAU, shape, scale)

    @property
    def proper(self) -> bool:
        return self.family is HetFamily.INV_GAMMA_TAU

    @property
    def constant_class(self) -> str:
        """Identifier of the arbitrary improper-prior constant ('none' if proper)."""
        return "none" if self.proper else self.family.value

    @property
    def min_studies(self) -> int:
        return MIN_STUDIES[self.family]

    def supports(self, support: Support) -> bool:
        # The inverse-gamma prior lives on tau > 0 and does not extend to
        # the negative-variance region.
        if self.family is HetFamily.INV_GAMMA_TAU:
            return support is Support.RE
        return True

    def logpdf(self, tau2, d: Dataset, support: Support = Support.RE):
        """Log (unnormalized) density on the tau^2 axis.

        Vectorized over tau2. Values outside the declared support raise
        OutsideSupport.
        """
        if not self.supports(support):
            raise OutsideSupport(
                f"{self.family.value} prior is defined on tau^2 > 0 only and cannot "
                f"be used with the {support.value} support"
            )
        tau2 = np.asarray(tau2, dtype=float)
        lower = 0.0 if support is Support.RE else -d.sigma2_min
        if np.any(tau2 <= lower) and self.family is not HetFamily.UNIFORM_TAU:
            # uniform-on-tau admits tau2 == 0 only as a removable singularity
            bad = tau2[tau2 <= lower]
            raise OutsideSupport(f"tau^2 values outside the {support.value} support: {bad}")
        if self.family is HetFamily.UNIFORM_TAU and np.any(tau2 < lower):
            bad = tau2[tau2 < lower]
            raise OutsideSupport(f"tau^2 values outside the {support.value} support: {bad}")

        f = self.family
        if f is HetFamily.UNIFORM_TAU2:
            return np.zeros_like(tau2)
        if f is HetFamily.UNIFORM_TAU:
            # 1/sqrt(|tau^2|); the |.| makes the marema extension explicit
            with np.errstate(divide="ignore"):
                return -0.5 * np.log(np.abs(tau2))
        if f is HetFamily.BERGER_DEELY:
            variances = np.asarray(d.variances)
            total = variances[None, ...] + np.atleast_1d(tau2)[..., None]
            if np.any(total <= 0):
                raise OutsideSupport("Berger-Deely prior undefined where sigma_i^2 + tau^2 <= 0")
            out = -np.sum(np.log(total), axis=-1) / d.k
            return out.reshape(tau2.shape)
        if f is HetFamily.INV_GAMMA_TAU:
            tau = np.sqrt(tau2)
            # density of tau, times the Jacobian d tau / d tau^2 = 1/(2 tau)
            return stats.invgamma(self.shape, scale=self.scale).logpdf(tau) - np.log(2.0 * tau)
        raise PriorError(f"unhandled family {f}")

    def pdf(self, tau2, d: Dataset, support: Support = Support.RE):
        return np.exp(self.logpdf(tau2, d, support))

    def logpdf_excess(self, omega, d: Dataset, support: Support = Support.RE):
        """Log density evaluated at tau^2 = lower_bound + omega, omega > 0.

        Numerically stable variant for integration on the shifted axis:
        sigma_i^2 + tau^2 is formed as (sigma_i^2 - sigma2_min) + omega so
        the smallest study's total variance never cancels to zero.
        """
        if not self.supports(support):
            raise OutsideSupport(
                f"{self.family.value} prior cannot be used with the {support.value} support"
            )
        omega = np.asarray(omega, dtype=float)
        if np.any(omega <= 0):
            raise OutsideSupport("omega must be strictly positive")
        if support is Support.RE:
            return self.logpdf(omega, d, support)
        # marema: tau2 = omega - sigma2_min
        f = self.family
        if f is HetFamily.UNIFORM_TAU2:
            return np.zeros_like(omega)
        if f is HetFamily.UNIFORM_TAU:
            tau2_abs = np.abs(omega - d.sigma2_min)
            with np.errstate(divide="ignore"):
                return -0.5 * np.log(tau2_abs)
        if f is HetFamily.BERGER_DEELY:
            base = np.asarray(d.variances) - d.sigma2_min
            total = base[None, ...] + np.atleast_1d(omega)[..., None]
            out = -np.sum(np.log(total), axis=-1) / d.k
            return out.reshape(omega.shape)
        raise PriorError(f"unhandled family {f}")

    def sample_tau2(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if not self.proper:
            raise ImproperPrior(
                f"cannot sample from the improper {self.family.value} prior without truncation"
            )
        tau = stats.invgamma(self.shape, scale=self.scale).rvs(size=count, random_state=rng)
        return np.asarray(tau) ** 2

    def describe(self) -> str:
        if self.family is HetFamily.INV_GAMMA_TAU:
            return f"inv_gamma_tau({self.shape:g}, {self.scale:g})"
        return self.family.value


def heterogeneity_prior_density(
    prior: HeterogeneityPrior, tau2, d: Dataset, support: Support = Support.RE
):
    """Unnormalized prior density on the tau^2 axis (see HeterogeneityPrior.logpdf)."""
    return prior.pdf(tau2, d, support)


def default_heterogeneity_prior() -> HeterogeneityPrior:
    return HeterogeneityPrior.berger_deely()


# ---------------------------------------------------------------------------
# induced priors (log odds ratio, Fisher-z) and the Student-t fit
# ---------------------------------------------------------------------------

class PointMass:
    """Degenerate distribution; stands in for a frozen scipy distribution."""

    def __init__(self, value: float):
        self.value = float(value)

    def rvs(self, size: int, random_state=None) -> np.ndarray:
        return np.full(size, self.value)


@dataclass(frozen=True)
class PriorScaleContext:
    """Base distributions from which scale-specific effect priors are induced.

    ``p1`` and ``p2`` are success-probability distributions on (0, 1);
    ``rho`` is a correlation distribution on (-1, 1). Frozen scipy
    distributions (or PointMass) are expected.
    """

    scale: Scale
    p1: object = None
    p2: object = None
    rho: object = None


def induced_logodds_samples(p1, p2, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Draw log odds ratios theta = log[(p1/(1-p1)) / (p2/(1-p2))]."""
    a = np.asarray(p1.rvs(size=draws, random_state=rng), dtype=float)
    b = np.asarray(p2.rvs(size=draws, random_state=rng), dtype=float)
    if np.any((a <= 0) | (a >= 1) | (b <= 0) | (b >= 1)):
        raise OutOfRange("success-probability draws must lie strictly inside (0, 1)")
    return np.log(a / (1.0 - a)) - np.log(b / (1.0 - b))


def _t_em_locscale(x: np.ndarray, df: float, iters: int = 60) -> tuple[float, float]:
    """ML location/scale of a Student-t with fixed df, via the EM weights."""
    mu = float(np.median(x))
    sigma2 = float(np.var(x)) or 1.0
    for _ in range(iters):
        z2 = (x - mu) ** 2 / sigma2
        w = (df + 1.0) / (df + z2)
        mu = float(np.sum(w * x) / np.sum(w))
        sigma2 = float(np.sum(w * (x - mu) ** 2) / x.size)
        if sigma2 <= 0:
            raise FitDiverged("t fit collapsed to zero scale")
    return mu, math.sqrt(sigma2)


def fit_student_t(samples: np.ndarray, df_grid: Optional[Sequence[float]] = None) -> EffectPrior:
    """Maximum-likelihood Student-t fit over (location, scale, df).

    The df axis is profiled: a log-spaced grid first, then a bounded 1-D
    refinement around the grid optimum.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 100:
        raise FitDiverged(f"need at least 100 samples to fit, got {x.size}")
    if float(np.std(x)) == 0.0:
        raise FitDiverged("samples are degenerate (zero spread)")
    if df_grid is None:
        df_grid = np.logspace(math.log10(1.0), math.log10(300.0), 25)

    def profile_nll(log_df: float) -> float:
        df = math.exp(log_df)
        mu, sigma = _t_em_locscale(x, df)
        return -float(np.sum(stats.t.logpdf(x, df, loc=mu, scale=sigma)))

    grid_logdf = np.log(np.asarray(df_grid, dtype=float))
    nll = np.array([profile_nll(ld) for ld in grid_logdf])
    best = int(np.argmin(nll))
    lo = grid_logdf[max(best - 1, 0)]
    hi = grid_logdf[min(best + 1, len(grid_logdf) - 1)]
    if lo == hi:
        refined = grid_logdf[best]
    else:
        res = optimize.minimize_scalar(profile_nll, bounds=(lo, hi), method="bounded")
        if not res.success:
            raise FitDiverged(f"df refinement failed: {res.message}")
        refined = float(res.x)
    df = math.exp(refined)
    mu, sigma = _t_em_locscale(x, df)
    if not (math.isfinite(mu) and math.isfinite(sigma) and sigma > 0):
        raise FitDiverged("t fit produced non-finite parameters")
    return EffectPrior.student_t(mu, sigma, df)


def derive_induced_logodds_prior(p1, p2, draws: int, rng: np.random.Generator) -> EffectPrior:
    """Induced prior on the log odds ratio, approximated by a Student-t.

    Starting from proper priors on the two success probabilities, draws
    log odds ratios and fits a t distribution by maximum likelihood.
    """
    if draws < 10**5:
        raise PriorError(f"need at least 1e5 draws for a stable fit, got {draws}")
    theta = induced_logodds_samples(p1, p2, draws, rng)
    return fit_student_t(theta)


def fisher_z(rho):
    """Fisher's z transform, 0.5*log((1+rho)/(1-rho)); |rho| < 1 required."""
    r = np.asarray(rho, dtype=float)
    if np.any(np.abs(r) >= 1):
        raise OutOfRange("correlation must satisfy |rho| < 1")
    out = np.arctanh(r)
    return float(out) if np.isscalar(rho) else out


def fisher_z_inv(eta):
    out = np.tanh(np.asarray(eta, dtype=float))
    return float(out) if np.isscalar(eta) else out
