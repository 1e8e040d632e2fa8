"""Data model for meta-analytic inputs.

Studies enter with a pre-computed effect estimate on the analysis scale
(standardized mean difference, log odds ratio, or Fisher-z correlation)
and a known standard error. Raw-data effect-size computation is out of
scope.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import (
    DuplicateId,
    MissingYear,
    NonFiniteValue,
    NonPositiveSE,
    MissingNRequiredLater,
    DataError,
)


class Scale(enum.Enum):
    SMD = "smd"
    LOG_ODDS = "log_odds"
    FISHER_Z = "fisher_z"
    OTHER = "other"

    @classmethod
    def parse(cls, text: str) -> "Scale":
        t = text.strip().lower().replace("-", "_")
        aliases = {
            "smd": cls.SMD,
            "log_odds": cls.LOG_ODDS,
            "logodds": cls.LOG_ODDS,
            "lor": cls.LOG_ODDS,
            "fisher_z": cls.FISHER_Z,
            "fisherz": cls.FISHER_Z,
            "z": cls.FISHER_Z,
            "other": cls.OTHER,
        }
        if t not in aliases:
            raise DataError(f"unknown effect scale: {text!r}")
        return aliases[t]


class HypothesisKind(enum.Enum):
    NULL_ZERO = "null_zero"
    TWO_SIDED_ALTERNATIVE = "two_sided_alternative"


class HypothesisTarget(enum.Enum):
    COMMON_EFFECT = "common_effect"          # theta under the CE model
    GLOBAL_MEAN = "global_mean"              # mu under RE / marema / BMA
    ALL_STUDY_EFFECTS = "all_study_effects"  # theta_1..theta_k under FE only


@dataclass(frozen=True)
class Hypothesis:
    kind: HypothesisKind
    target: HypothesisTarget


NULL_COMMON = Hypothesis(HypothesisKind.NULL_ZERO, HypothesisTarget.COMMON_EFFECT)
ALT_COMMON = Hypothesis(HypothesisKind.TWO_SIDED_ALTERNATIVE, HypothesisTarget.COMMON_EFFECT)
NULL_MEAN = Hypothesis(HypothesisKind.NULL_ZERO, HypothesisTarget.GLOBAL_MEAN)
ALT_MEAN = Hypothesis(HypothesisKind.TWO_SIDED_ALTERNATIVE, HypothesisTarget.GLOBAL_MEAN)
NULL_ALL = Hypothesis(HypothesisKind.NULL_ZERO, HypothesisTarget.ALL_STUDY_EFFECTS)
ALT_ALL = Hypothesis(HypothesisKind.TWO_SIDED_ALTERNATIVE, HypothesisTarget.ALL_STUDY_EFFECTS)


@dataclass(frozen=True)
class Study:
    """One study: effect estimate ``y`` with known standard error ``se``.

    ``n`` (total sample size) is optional and only needed by the
    unit-information prior. ``year`` is optional and only needed when
    ordering studies chronologically.
    """

    id: str
    y: float
    se: float
    year: Optional[int] = None
    n: Optional[int] = None

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise NonFiniteValue(f"study {self.id!r}: effect estimate is not finite")
        if not math.isfinite(self.se):
            raise NonFiniteValue(f"study {self.id!r}: standard error is not finite")
        if self.se <= 0:
            raise NonPositiveSE(f"study {self.id!r}: se must be > 0, got {self.se}")
        if self.n is not None and (self.n < 2 or int(self.n) != self.n):
            raise NonFiniteValue(f"study {self.id!r}: n must be an integer >= 2, got {self.n}")

    @property
    def var(self) -> float:
        return self.se * self.se


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of studies; order is the analysis/updating order."""

    studies: tuple[Study, ...]
    scale: Scale = Scale.OTHER

    def __post_init__(self):
        if len(self.studies) == 0:
            raise DataError("dataset must contain at least one study")
        seen = set()
        for s in self.studies:
            if s.id in seen:
                raise DuplicateId(f"duplicate study id {s.id!r}")
            seen.add(s.id)

    @property
    def k(self) -> int:
        return len(self.studies)

    @property
    def y(self) -> tuple[float, ...]:
        return tuple(s.y for s in self.studies)

    @property
    def se(self) -> tuple[float, ...]:
        return tuple(s.se for s in self.studies)

    @property
    def variances(self) -> tuple[float, ...]:
        return tuple(s.var for s in self.studies)

    @property
    def sigma2_min(self) -> float:
        return min(s.var for s in self.studies)

    @property
    def total_n(self) -> Optional[int]:
        """Sum of per-study sample sizes; None unless every study has n."""
        if any(s.n is None for s in self.studies):
            return None
        return sum(s.n for s in self.studies)  # type: ignore[misc]

    def prefix(self, j: int) -> "Dataset":
        """First ``j`` studies in the current order."""
        if not 1 <= j <= self.k:
            raise DataError(f"prefix length must be in [1, {self.k}], got {j}")
        return Dataset(self.studies[:j], self.scale)


def validate_dataset(
    rows: Iterable[tuple],
    scale: Scale | str = Scale.OTHER,
) -> Dataset:
    """Build a Dataset from raw ``(id, year, y, se, n)`` rows.

    ``year`` and ``n`` may be None. Emits a MissingNRequiredLater warning
    (not an error) when any sample size is absent, since only the
    unit-information prior needs them.
    """
    if isinstance(scale, str):
        scale = Scale.parse(scale)
    rows = list(rows)
    if not rows:
        raise DataError("no study rows supplied")
    studies = []
    for row in rows:
        sid, year, y, se, n = (list(row) + [None] * 5)[:5]
        studies.append(
            Study(
                id=str(sid),
                year=None if year in (None, "") else int(year),
                y=float(y),
                se=float(se),
                n=None if n in (None, "") else int(n),
            )
        )
    ds = Dataset(tuple(studies), scale)
    if ds.total_n is None:
        warnings.warn(
            "one or more studies lack a sample size; the unit-information "
            "prior will not be available for this dataset",
            MissingNRequiredLater,
            stacklevel=2,
        )
    return ds


def sort_by_year(d: Dataset) -> Dataset:
    """Stable ascending sort by publication year (ties keep input order)."""
    if any(s.year is None for s in d.studies):
        missing = [s.id for s in d.studies if s.year is None]
        raise MissingYear(f"studies without a year: {missing}")
    ordered = sorted(d.studies, key=lambda s: s.year)  # sorted() is stable
    return Dataset(tuple(ordered), d.scale)


CSV_HEADER = ["id", "year", "y", "se", "n"]


def read_csv(path) -> list[tuple]:
    """Read study rows from a CSV file with header ``id,year,y,se,n``.

    Blank ``year``/``n`` cells are allowed; row order is meaningful and
    preserved.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV")
        fields = [f.strip().lower() for f in reader.fieldnames]
        required = {"id", "y", "se"}
        if not required.issubset(fields):
            raise DataError(
                f"{path}: CSV header must contain id,y,se (and optionally year,n); got {reader.fieldnames}"
            )
        for raw in reader:
            rec = {k.strip().lower(): (v.strip() if isinstance(v, str) else v) for k, v in raw.items()}
            try:
                rows.append(
                    (
                        rec["id"],
                        rec.get("year") or None,
                        float(rec["y"]),
                        float(rec["se"]),
                        rec.get("n") or None,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: malformed row {raw!r}: {exc}") from exc
    return rows


def load_csv(path, scale: Scale | str = Scale.OTHER) -> Dataset:
    return validate_dataset(read_csv(path), scale)


def write_csv(d: Dataset, path) -> None:
    """Write a dataset back out; values round-trip at full precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in d.studies:
            writer.writerow(
                [
                    s.id,
                    "" if s.year is None else s.year,
                    repr(s.y),
                    repr(s.se),
                    "" if s.n is None else s.n,
                ]
            )
