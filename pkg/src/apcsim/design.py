"""Dummy-coded design matrix and cell-level summaries of a dataset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .errors import InputDomainError
from .grid import GridSpec, centering_indexes


@dataclass(frozen=True)
class DesignMatrix:
    """``N x (I + J + K)`` 0/1 matrix with age, period, cohort column blocks.

    Rows follow the dataset's row order.
    """

    X: np.ndarray
    spec: GridSpec

    @property
    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        I, J = self.spec.I, self.spec.J
        return self.X[:, :I], self.X[:, I : I + J], self.X[:, I + J :]

    def null_vector(self) -> np.ndarray:
        return centering_indexes(self.spec).null_vector


def build_design(data: Dataset) -> DesignMatrix:
    spec = data.spec
    X = np.zeros((data.N, spec.L), dtype=np.int8)
    rows = np.arange(data.N)
    X[rows, data.i - 1] = 1
    X[rows, spec.I + data.j - 1] = 1
    X[rows, spec.I + spec.J + data.k - 1] = 1
    return DesignMatrix(X, spec)


def cell_means(data: Dataset) -> np.ndarray:
    """``I x J`` array of per-cell averages of ``y``."""
    spec = data.spec
    sums = np.zeros((spec.I, spec.J))
    counts = np.zeros((spec.I, spec.J))
    np.add.at(sums, (data.i - 1, data.j - 1), data.y)
    np.add.at(counts, (data.i - 1, data.j - 1), 1)
    if np.any(counts == 0):
        raise InputDomainError("every (i, j) cell needs at least one observation")
    return sums / counts


@dataclass(frozen=True)
class CellStats:
    """Sufficient statistics of the normal linear model, one entry per cell.

    ``age``, ``period`` and ``cohort`` are 0-based level indexes, ``count``
    the observations in the cell, ``mean`` their average, and ``ssw`` the
    pooled within-cell sum of squares.
    """

    age: np.ndarray
    period: np.ndarray
    cohort: np.ndarray
    count: np.ndarray
    mean: np.ndarray
    ssw: float
    spec: GridSpec

    @property
    def N(self) -> int:
        return int(self.count.sum())

    def incidence(self) -> np.ndarray:
        """``n_cells x (I + J + K)`` dummy coding of the cells."""
        spec = self.spec
        Z = np.zeros((len(self.count), spec.L))
        r = np.arange(len(self.count))
        Z[r, self.age] = 1.0
        Z[r, spec.I + self.period] = 1.0
        Z[r, spec.I + spec.J + self.cohort] = 1.0
        return Z


def cell_stats(data: Dataset) -> CellStats:
    spec = data.spec
    if data.N == 0:
        empty = np.zeros(0, dtype=np.int64)
        return CellStats(empty, empty, empty, np.zeros(0), np.zeros(0), 0.0, spec)
    means = cell_means(data)
    counts = np.zeros((spec.I, spec.J))
    np.add.at(counts, (data.i - 1, data.j - 1), 1)
    resid = data.y - means[data.i - 1, data.j - 1]
    ii, jj = np.meshgrid(np.arange(spec.I), np.arange(spec.J), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    return CellStats(
        age=ii,
        period=jj,
        cohort=jj - ii + spec.I - 1,
        count=counts.ravel(),
        mean=means.ravel(),
        ssw=float(resid @ resid),
        spec=spec,
    )
