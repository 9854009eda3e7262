"""Index arithmetic and centering indexes of the age-period table.

All indexes are 1-based, as in the usual APC notation: age ``i = 1..I``,
period ``j = 1..J`` and cohort ``k = j - i + I`` in ``1..K`` with
``K = I + J - 1``. Arrays are 0-based only where they are stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError


@dataclass(frozen=True)
class GridSpec:
    """Dimensions of the age-period table and the noise settings.

    Parameters
    ----------
    I, J : int
        Number of age and period groups (both at least 2).
    T : int
        Replicated observations per (age, period) cell.
    gamma : float or None
        Noise standard deviation used when generating data. ``None`` for
        datasets of unknown origin.
    K : int, optional
        Number of cohorts. Derived as ``I + J - 1`` when omitted and
        validated against it when given.
    """

    I: int
    J: int
    T: int = 10
    gamma: float | None = 0.1
    K: int = field(default=0)

    def __post_init__(self):
        if int(self.I) != self.I or int(self.J) != self.J or int(self.T) != self.T:
            raise InputDomainError("I, J and T must be integers")
        if self.I < 2 or self.J < 2:
            raise InputDomainError(f"need I >= 2 and J >= 2, got I={self.I}, J={self.J}")
        if self.T < 1:
            raise InputDomainError(f"need T >= 1, got T={self.T}")
        if self.gamma is not None and not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InputDomainError(f"gamma must be positive, got {self.gamma}")
        K = self.I + self.J - 1
        if self.K == 0:
            object.__setattr__(self, "K", K)
        elif self.K != K:
            raise InputDomainError(f"K must equal I + J - 1 = {K}, got {self.K}")

    @property
    def L(self) -> int:
        """Total number of effect levels, ``I + J + K``."""
        return self.I + self.J + self.K

    @property
    def N(self) -> int:
        return self.I * self.J * self.T

    def to_dict(self) -> dict:
        return {"I": self.I, "J": self.J, "K": self.K, "T": self.T, "gamma": self.gamma}


@dataclass(frozen=True)
class CenteringIndexes:
    vA: np.ndarray
    vP: np.ndarray
    vC: np.ndarray

    @property
    def null_vector(self) -> np.ndarray:
        """Stacked ``(vA, -vP, vC)``, the direction the design cannot see."""
        return np.concatenate([self.vA, -self.vP, self.vC])


def cohort_index(i: int, j: int, I: int, J: int | None = None) -> int:
    """Return the cohort index ``k = j - i + I`` of cell ``(i, j)``."""
    if not 1 <= i <= I:
        raise InputDomainError(f"age index {i} outside 1..{I}")
    if j < 1 or (J is not None and j > J):
        raise InputDomainError(f"period index {j} outside 1..{J if J is not None else 'J'}")
    return j - i + I


def centered_index(n: int) -> np.ndarray:
    """``v_m = m - (n + 1) / 2`` for ``m = 1..n``."""
    return np.arange(1, n + 1, dtype=float) - (n + 1) / 2.0


def centering_indexes(spec: GridSpec) -> CenteringIndexes:
    return CenteringIndexes(
        vA=centered_index(spec.I), vP=centered_index(spec.J), vC=centered_index(spec.K)
    )


def index_weight_sum(n: int) -> float:
    """Sum of squared centering indexes of a length-``n`` block.

    Closed form ``n (n + 1) (n - 1) / 12``.
    """
    if n < 1:
        raise InputDomainError(f"group count must be >= 1, got {n}")
    return n * (n + 1) * (n - 1) / 12.0


def weight_gap(I: int, J: int) -> float:
    """Excess of the cohort/period index-weight ratio over ``(K-1)/(J-1)``.

    Equal to ``(K-1)(2J+I)(I-1) / (J(J+1)(J-1))``, which is positive for every
    table with ``I, J >= 2``. A positive gap means the squared-effect priors
    load the cohort linear trend more heavily than the random-walk prior does.
    """
    if I < 2 or J < 2:
        raise InputDomainError(f"need I >= 2 and J >= 2, got I={I}, J={J}")
    K = I + J - 1
    return (K - 1) * (2 * J + I) * (I - 1) / (J * (J + 1) * (J - 1))


def weight_ratios(I: int, J: int) -> tuple[float, float]:
    """Return ``((K-1)/(J-1), sum vC^2 / sum vP^2)``."""
    K = I + J - 1
    return (K - 1) / (J - 1), index_weight_sum(K) / index_weight_sum(J)
