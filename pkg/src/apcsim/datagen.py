"""Artificial effect parameters for the 13 linear-component cases, and data.

Each case fixes the sign of the linear slope of the age, period and cohort
effects. A factor with a nonzero slope also gets a trigonometric component
``nl * cos(pi * m)`` so that the linear parts become estimable through the
nonlinear ones. Observations are drawn from a PCG64 generator
(``numpy.random.PCG64``), so a seed reproduces the same data on any platform.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InputDomainError
from .grid import GridSpec, centered_index

# Sign patterns (A, P, C) for cases 1 to 13.
CASE_SIGNS: tuple[tuple[int, int, int], ...] = (
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 1, 0),
    (1, 0, 1),
    (0, 1, 1),
    (0, 1, -1),
    (-1, 0, 1),
    (-1, 1, 0),
    (1, 1, -1),
    (1, 1, 1),
    (-1, 1, 1),
    (1, -1, 1),
)

_SIGN_CHAR = {1: "+", 0: "0", -1: "-"}


@dataclass(frozen=True)
class CaseSpec:
    signA: int
    signP: int
    signC: int
    slope_mag: float = 0.1
    nl_mag: float = 0.05

    def __post_init__(self):
        for s in self.signs:
            if s not in (-1, 0, 1):
                raise InputDomainError(f"signs must be -1, 0 or +1, got {self.signs}")
        if self.signs == (0, 0, 0):
            raise InputDomainError("at least one factor needs a linear component")
        if self.slope_mag < 0 or self.nl_mag < 0:
            raise InputDomainError("magnitudes must be non-negative")

    @property
    def signs(self) -> tuple[int, int, int]:
        return (self.signA, self.signP, self.signC)

    @property
    def label(self) -> str:
        """Compact pattern such as ``"-0+"``."""
        return "".join(_SIGN_CHAR[s] for s in self.signs)

    def negated(self) -> CaseSpec:
        return CaseSpec(-self.signA, -self.signP, -self.signC, self.slope_mag, self.nl_mag)

    def to_dict(self) -> dict:
        return {
            "signA": self.signA,
            "signP": self.signP,
            "signC": self.signC,
            "slope_mag": self.slope_mag,
            "nl_mag": self.nl_mag,
        }


@dataclass
class EffectSet:
    """Intercept plus age, period and cohort effect vectors."""

    b0: float
    age: np.ndarray
    period: np.ndarray
    cohort: np.ndarray

    def __post_init__(self):
        self.b0 = float(self.b0)
        self.age = np.asarray(self.age, dtype=float)
        self.period = np.asarray(self.period, dtype=float)
        self.cohort = np.asarray(self.cohort, dtype=float)

    @property
    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.age, self.period, self.cohort

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.age), len(self.period), len(self.cohort)

    def stacked(self) -> np.ndarray:
        """Effects as one length ``I + J + K`` vector (intercept excluded)."""
        return np.concatenate(self.blocks)

    @classmethod
    def from_stacked(cls, b0: float, b: np.ndarray, I: int, J: int) -> EffectSet:
        b = np.asarray(b, dtype=float)
        return cls(b0, b[:I], b[I : I + J], b[I + J :])

    def centered(self) -> EffectSet:
        """Sweep each block's mean into the intercept so every block sums to 0."""
        means = [blk.mean() for blk in self.blocks]
        return EffectSet(
            self.b0 + sum(means),
            self.age - means[0],
            self.period - means[1],
            self.cohort - means[2],
        )

    def shifted(self, t: float) -> EffectSet:
        """Add ``t * (vA, -vP, vC)``; the likelihood cannot tell the difference."""
        I, J, K = self.shape
        return EffectSet(
            self.b0,
            self.age + t * centered_index(I),
            self.period - t * centered_index(J),
            self.cohort + t * centered_index(K),
        )

    def to_dict(self) -> dict:
        return {
            "b0": self.b0,
            "age": self.age.tolist(),
            "period": self.period.tolist(),
            "cohort": self.cohort.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EffectSet:
        return cls(d.get("b0", 0.0), d["age"], d["period"], d["cohort"])


@dataclass
class Dataset:
    """Long-format observations of an age-period table.

    ``i``, ``j`` and ``k`` are 1-based integer index columns; ``y`` holds the
    observed values. Rows are kept in the order they were generated or read.
    """

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    y: np.ndarray
    spec: GridSpec
    seed: int | None = None
    case: CaseSpec | str = "external"

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.k = np.asarray(self.k, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        validate_dataset(self)

    @property
    def N(self) -> int:
        return len(self.y)

    @property
    def rows(self) -> list[tuple[int, int, int, float]]:
        return list(zip(self.i.tolist(), self.j.tolist(), self.k.tolist(), self.y.tolist()))

    def to_csv(self, path: str | Path | None = None) -> str:
        """Write ``i,j,k,y`` rows; returns the text when ``path`` is None."""
        buf = io.StringIO()
        buf.write("i,j,k,y\n")
        for i, j, k, y in self.rows:
            # repr() round-trips float64 exactly
            buf.write(f"{i},{j},{k},{y!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="\n")
        return text


def validate_dataset(data: Dataset) -> None:
    spec = data.spec
    n = len(data.y)
    if not (len(data.i) == len(data.j) == len(data.k) == n):
        raise DataFormatError("index and value columns differ in length")
    if n == 0:
        return
    if data.i.min() < 1 or data.i.max() > spec.I:
        raise DataFormatError(f"age index outside 1..{spec.I}")
    if data.j.min() < 1 or data.j.max() > spec.J:
        raise DataFormatError(f"period index outside 1..{spec.J}")
    bad = np.flatnonzero(data.k != data.j - data.i + spec.I)
    if bad.size:
        raise DataFormatError(f"row {bad[0] + 1}: cohort index must equal j - i + I")
    if not np.all(np.isfinite(data.y)):
        raise DataFormatError("observed values must be finite")
    counts = np.zeros((spec.I, spec.J), dtype=np.int64)
    np.add.at(counts, (data.i - 1, data.j - 1), 1)
    if np.any(counts != spec.T):
        raise DataFormatError(
            f"every (i, j) cell must appear exactly T={spec.T} times "
            f"(found counts between {counts.min()} and {counts.max()})"
        )


def enumerate_cases(slope_mag: float = 0.1, nl_mag: float = 0.05) -> list[CaseSpec]:
    """The 13 sign patterns, one per {pattern, negated pattern} pair."""
    if not slope_mag > 0:
        raise InputDomainError("slope_mag must be positive")
    if nl_mag < 0:
        raise InputDomainError("nl_mag must be non-negative")
    return [CaseSpec(a, p, c, slope_mag, nl_mag) for a, p, c in CASE_SIGNS]


def get_case(case_id: int, slope_mag: float = 0.1, nl_mag: float = 0.05) -> CaseSpec:
    if not 1 <= case_id <= len(CASE_SIGNS):
        raise InputDomainError(f"case id must be in 1..{len(CASE_SIGNS)}, got {case_id}")
    return enumerate_cases(slope_mag, nl_mag)[case_id - 1]


def _artificial_block(sign: int, n: int, slope_mag: float, nl_mag: float) -> np.ndarray:
    slope = sign * slope_mag
    amp = sign * nl_mag
    m = np.arange(1, n + 1, dtype=float)
    # cos(pi m) alternates -1, +1, ...; its sum is -1 for odd n, hence the shift.
    shift = -(amp / (2 * n)) * (math.cos(math.pi * n) - 1.0)
    return shift + slope * centered_index(n) + amp * np.cos(math.pi * m)


def artificial_effects(case: CaseSpec, spec: GridSpec) -> EffectSet:
    """True effects for a case: linear slope plus alternating component."""
    return EffectSet(
        0.0,
        _artificial_block(case.signA, spec.I, case.slope_mag, case.nl_mag),
        _artificial_block(case.signP, spec.J, case.slope_mag, case.nl_mag),
        _artificial_block(case.signC, spec.K, case.slope_mag, case.nl_mag),
    )


def table_indexes(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row indexes with age varying fastest, then period, then replicate."""
    i = np.tile(np.arange(1, spec.I + 1), spec.J * spec.T)
    j = np.tile(np.repeat(np.arange(1, spec.J + 1), spec.I), spec.T)
    k = j - i + spec.I
    return i, j, k


def expected_cell_means(beta: EffectSet, I: int, J: int) -> np.ndarray:
    """Noise-free I x J surface ``b0 + bA_i + bP_j + bC_k``."""
    ii, jj = np.meshgrid(np.arange(I), np.arange(J), indexing="ij")
    kk = jj - ii + I - 1
    return beta.b0 + beta.age[ii] + beta.period[jj] + beta.cohort[kk]


def generate_dataset(
    beta: EffectSet, spec: GridSpec, seed: int, case: CaseSpec | str = "external"
) -> Dataset:
    """Draw ``T`` normal observations around the mean of every cell."""
    if beta.shape != (spec.I, spec.J, spec.K):
        raise InputDomainError(
            f"effect lengths {beta.shape} do not match grid {(spec.I, spec.J, spec.K)}"
        )
    if spec.gamma is None:
        raise InputDomainError("generating data needs a noise level gamma")
    i, j, k = table_indexes(spec)
    mu = beta.b0 + beta.age[i - 1] + beta.period[j - 1] + beta.cohort[k - 1]
    rng = np.random.Generator(np.random.PCG64(seed))
    y = mu + spec.gamma * rng.standard_normal(len(mu))
    return Dataset(i, j, k, y, spec, seed=seed, case=case)


def read_csv(path: str | Path, spec: GridSpec | None = None) -> Dataset:
    """Read an ``i,j,k,y`` file.

    Without ``spec`` the table size is inferred: ``I`` and ``J`` from the
    largest indexes and ``T`` from the row count.
    """
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["i", "j", "k", "y"]:
        raise DataFormatError(f"{path}: expected header 'i,j,k,y', got {header}")
    cols: list[list] = [[], [], [], []]
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise DataFormatError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
        try:
            cols[0].append(int(row[0]))
            cols[1].append(int(row[1]))
            cols[2].append(int(row[2]))
            cols[3].append(float(row[3]))
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    i, j, k, y = (np.asarray(c) for c in cols)
    if len(y) == 0:
        raise DataFormatError(f"{path}: no observations")
    if spec is None:
        I, J = int(i.max()), int(j.max())
        T, rem = divmod(len(y), I * J)
        if rem or T == 0:
            raise DataFormatError(f"{path}: {len(y)} rows do not fill a complete {I}x{J} table")
        try:
            spec = GridSpec(I, J, T, gamma=None)
        except InputDomainError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
    bad = np.flatnonzero(k != j - i + spec.I)
    if bad.size:
        raise DataFormatError(f"{path}: line {bad[0] + 2}: cohort index must equal j - i + I")
    return Dataset(i, j, k, y, spec)
