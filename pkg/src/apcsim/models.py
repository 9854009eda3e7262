"""Likelihood, priors and the reparameterized posterior of the three models.

The unconstrained coordinates follow a non-centered parameterization: the
sampler sees standard-normal vectors ``std`` and log-scale hyperparameters,
and the effects are built from them by :func:`transform`.

* RE (random effects): ``b = sigma_X * std`` per factor, with
  ``sigma_X = floor + exp(h_X)``.
* RR (ridge regression): ``b = lambda * std`` for all factors,
  ``lambda = exp(h)``.
* RW (random walk): adjacent differences ``d = sigma_X * std`` (length
  ``n - 1``); the first level is fixed so that the block sums to zero.

Hyperparameters and the residual scale carry an improper flat prior on the
positive half-line; the log-Jacobian of the log transform is included.
Normalizing constants are dropped throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .datagen import Dataset, EffectSet
from .design import CellStats, cell_stats
from .errors import InputDomainError
from .grid import GridSpec, centered_index

DEFAULT_SIGMA_FLOOR = 0.05


class ModelKind(str, enum.Enum):
    RE = "re"
    RR = "rr"
    RW = "rw"

    @property
    def n_hyper(self) -> int:
        return 1 if self is ModelKind.RR else 3

    @property
    def hyper_names(self) -> tuple[str, ...]:
        return ("lambda",) if self is ModelKind.RR else ("sigma_A", "sigma_P", "sigma_C")

    @property
    def title(self) -> str:
        return {"re": "random effects", "rr": "ridge regression", "rw": "random walk"}[self.value]

    @classmethod
    def parse(cls, value: str | ModelKind) -> ModelKind:
        if isinstance(value, ModelKind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InputDomainError(f"unknown model {value!r}; expected re, rr or rw") from None


def rw_basis(n: int) -> np.ndarray:
    """``n x (n-1)`` map from adjacent differences to a sum-to-zero block.

    ``b_1 = -(1/n) sum_a (n - a) d_a`` and ``b_i = b_1 + sum_{a<i} d_a``.
    """
    a = np.arange(1, n)
    i = np.arange(1, n + 1)[:, None]
    return (a[None, :] < i).astype(float) - (n - a)[None, :] / n


def std_lengths(kind: ModelKind, spec: GridSpec) -> tuple[int, int, int]:
    off = 1 if kind is ModelKind.RW else 0
    return spec.I - off, spec.J - off, spec.K - off


@dataclass
class UnconstrainedParams:
    std_A: np.ndarray
    std_P: np.ndarray
    std_C: np.ndarray
    log_sigma: float
    hyper: np.ndarray
    b0: float

    def __post_init__(self):
        self.std_A = np.atleast_1d(np.asarray(self.std_A, dtype=float))
        self.std_P = np.atleast_1d(np.asarray(self.std_P, dtype=float))
        self.std_C = np.atleast_1d(np.asarray(self.std_C, dtype=float))
        self.hyper = np.atleast_1d(np.asarray(self.hyper, dtype=float))
        self.log_sigma = float(self.log_sigma)
        self.b0 = float(self.b0)

    def check(self, kind: ModelKind, spec: GridSpec) -> None:
        expected = std_lengths(kind, spec)
        got = (len(self.std_A), len(self.std_P), len(self.std_C))
        if got != expected:
            raise InputDomainError(f"{kind.value}: std lengths {got}, expected {expected}")
        if len(self.hyper) != kind.n_hyper:
            raise InputDomainError(
                f"{kind.value}: expected {kind.n_hyper} hyperparameters, got {len(self.hyper)}"
            )

    def to_vector(self) -> np.ndarray:
        """Flat layout ``[std_A, std_P, std_C, b0, log_sigma, hyper...]``."""
        return np.concatenate(
            [self.std_A, self.std_P, self.std_C, [self.b0, self.log_sigma], self.hyper]
        )

    @classmethod
    def from_vector(cls, kind: ModelKind, spec: GridSpec, x: np.ndarray) -> UnconstrainedParams:
        nA, nP, nC = std_lengths(kind, spec)
        p = nA + nP + nC
        x = np.asarray(x, dtype=float)
        if len(x) != p + 2 + kind.n_hyper:
            raise InputDomainError(f"vector length {len(x)} does not fit {kind.value} on this grid")
        return cls(
            x[:nA], x[nA : nA + nP], x[nA + nP : p], x[p + 1], x[p + 2 :], x[p]
        )

    @classmethod
    def zeros(cls, kind: ModelKind, spec: GridSpec) -> UnconstrainedParams:
        nA, nP, nC = std_lengths(kind, spec)
        return cls(np.zeros(nA), np.zeros(nP), np.zeros(nC), 0.0, np.zeros(kind.n_hyper), 0.0)


def hyper_scales(
    kind: ModelKind, hyper: np.ndarray, sigma_floor: float = DEFAULT_SIGMA_FLOOR
) -> tuple[np.ndarray, np.ndarray]:
    """Per-factor prior scales and their derivatives w.r.t. the log coordinates.

    Returns ``(scales, dscale)``, each of length 3 (age, period, cohort). For
    RR the three entries share one coordinate.
    """
    hyper = np.atleast_1d(np.asarray(hyper, dtype=float))
    e = np.exp(hyper)
    if kind is ModelKind.RR:
        return np.repeat(e, 3), np.repeat(e, 3)
    if kind is ModelKind.RE:
        return sigma_floor + e, e
    return e, e


def transform(
    kind: ModelKind | str, u: UnconstrainedParams, sigma_floor: float = DEFAULT_SIGMA_FLOOR
) -> EffectSet:
    """Build effect vectors from unconstrained coordinates."""
    kind = ModelKind.parse(kind)
    if len(u.hyper) != kind.n_hyper:
        raise InputDomainError(
            f"{kind.value}: expected {kind.n_hyper} hyperparameters, got {len(u.hyper)}"
        )
    scales, _ = hyper_scales(kind, u.hyper, sigma_floor)
    blocks = []
    for std, scale in zip((u.std_A, u.std_P, u.std_C), scales):
        if kind is ModelKind.RW:
            if len(std) < 1:
                raise InputDomainError("random walk blocks need at least one difference")
            blocks.append(rw_basis(len(std) + 1) @ (scale * std))
        else:
            blocks.append(scale * std)
    return EffectSet(u.b0, *blocks)


def std_from_effects(kind: ModelKind | str, effects: EffectSet, scales) -> tuple[np.ndarray, ...]:
    """Inverse of :func:`transform` for fixed prior scales.

    For RW the blocks must already sum to zero.
    """
    kind = ModelKind.parse(kind)
    scales = np.broadcast_to(np.asarray(scales, dtype=float), (3,))
    out = []
    for blk, scale in zip(effects.blocks, scales):
        if kind is ModelKind.RW:
            if abs(blk.sum()) > 1e-9 * max(1.0, np.abs(blk).max()):
                raise InputDomainError("random walk effects must sum to zero per block")
            out.append(np.diff(blk) / scale)
        else:
            out.append(blk / scale)
    return tuple(out)


def linear_predictor(effects: EffectSet, data: Dataset) -> np.ndarray:
    return (
        effects.b0
        + effects.age[data.i - 1]
        + effects.period[data.j - 1]
        + effects.cohort[data.k - 1]
    )


def log_likelihood(effects: EffectSet, sigma: float, data: Dataset) -> float:
    """Normal log likelihood without the ``2 pi`` constant."""
    if not sigma > 0:
        raise InputDomainError("sigma must be positive")
    spec = data.spec
    if effects.shape != (spec.I, spec.J, spec.K):
        raise InputDomainError("effect lengths do not match the dataset grid")
    r = data.y - linear_predictor(effects, data)
    return -data.N * np.log(sigma) - (r @ r) / (2.0 * sigma**2)


def _hyper3(kind: ModelKind, hyper) -> np.ndarray:
    h = np.atleast_1d(np.asarray(hyper, dtype=float))
    if kind is ModelKind.RR:
        if len(h) not in (1, 3) or (len(h) == 3 and not np.all(h == h[0])):
            raise InputDomainError("ridge regression takes a single scale lambda")
        h = np.repeat(h[0], 3)
    elif len(h) != 3:
        raise InputDomainError(f"{kind.value} takes three prior scales")
    if not np.all(h > 0):
        raise InputDomainError("prior scales must be positive")
    return h


def log_prior(kind: ModelKind | str, effects: EffectSet, hyper) -> float:
    """Log prior density of the effects given positive prior scales.

    ``hyper`` is ``(sigma_A, sigma_P, sigma_C)`` for RE and RW, and ``lambda``
    for RR. RE and RR penalize squared effects; RW penalizes squared
    differences of adjacent levels.
    """
    kind = ModelKind.parse(kind)
    scales = _hyper3(kind, hyper)
    total = 0.0
    for blk, s in zip(effects.blocks, scales):
        if kind is ModelKind.RW:
            d = np.diff(blk)
            total += -(len(blk) - 1) * np.log(s) - (d @ d) / (2 * s**2)
        else:
            total += -len(blk) * np.log(s) - (blk @ blk) / (2 * s**2)
    return float(total)


def log_prior_decomposed(
    kind: ModelKind | str,
    slopes: tuple[float, float, float],
    s: float,
    nonlinear: tuple[np.ndarray, np.ndarray, np.ndarray],
    hyper,
) -> float:
    """Log prior written through linear slopes and nonlinear residuals.

    The effects are ``(sA + s) vA + nlA``, ``(sP - s) vP + nlP`` and
    ``(sC + s) vC + nlC`` with each ``nl`` orthogonal to its centering index.
    RE/RR use ``sum b^2 = slope^2 sum v^2 + sum nl^2``; RW uses
    ``sum (diff b)^2 = slope^2 (n-1) + 2 slope (nl_n - nl_1) + sum (diff nl)^2``.
    """
    kind = ModelKind.parse(kind)
    scales = _hyper3(kind, hyper)
    totals = (slopes[0] + s, slopes[1] - s, slopes[2] + s)
    out = 0.0
    for t, nl, sc in zip(totals, nonlinear, scales):
        nl = np.asarray(nl, dtype=float)
        n = len(nl)
        if kind is ModelKind.RW:
            dn = np.diff(nl)
            quad = t**2 * (n - 1) + 2 * t * (nl[-1] - nl[0]) + dn @ dn
            out += -(n - 1) * np.log(sc) - quad / (2 * sc**2)
        else:
            v = centered_index(n)
            quad = t**2 * (v @ v) + nl @ nl
            out += -n * np.log(sc) - quad / (2 * sc**2)
    return float(out)


class Posterior:
    """Log posterior of one model on one dataset, in unconstrained coordinates.

    The data enter only through per-cell counts, means and the pooled
    within-cell sum of squares, which is exact for the normal model.
    """

    def __init__(
        self,
        kind: ModelKind | str,
        data: Dataset | CellStats,
        sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    ):
        self.kind = ModelKind.parse(kind)
        self.stats = data if isinstance(data, CellStats) else cell_stats(data)
        self.spec = self.stats.spec
        if not sigma_floor >= 0:
            raise InputDomainError("sigma_floor must be non-negative")
        self.sigma_floor = float(sigma_floor) if self.kind is ModelKind.RE else 0.0
        self.lengths = std_lengths(self.kind, self.spec)
        self.p = sum(self.lengths)
        self.dim = self.p + 2 + self.kind.n_hyper
        # column -> factor (0 age, 1 period, 2 cohort)
        self.col_block = np.repeat(np.arange(3), self.lengths)

    @cached_property
    def basis(self) -> np.ndarray:
        """Block-diagonal ``L x p`` map from unit-scale coordinates to effects."""
        spec = self.spec
        B = np.zeros((spec.L, self.p))
        row = col = 0
        for n, m in zip((spec.I, spec.J, spec.K), self.lengths):
            B[row : row + n, col : col + m] = rw_basis(n) if self.kind is ModelKind.RW else np.eye(n)
            row += n
            col += m
        return B

    @cached_property
    def cell_design(self) -> np.ndarray:
        """Cells x p matrix ``Z @ basis``."""
        return self.stats.incidence() @ self.basis

    def unpack(self, x: np.ndarray) -> UnconstrainedParams:
        return UnconstrainedParams.from_vector(self.kind, self.spec, x)

    def scales(self, hyper: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return hyper_scales(self.kind, hyper, self.sigma_floor)

    def effects(self, x: np.ndarray) -> EffectSet:
        p = self.p
        sc, _ = self.scales(x[p + 2 :])
        b = self.basis @ (sc[self.col_block] * x[:p])
        return EffectSet.from_stacked(x[p], b, self.spec.I, self.spec.J)

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InputDomainError(f"expected a vector of length {self.dim}, got {x.shape}")
        p = self.p
        std, b0, log_sigma, h = x[:p], x[p], x[p + 1], x[p + 2 :]
        sc, dsc = self.scales(h)
        c = sc[self.col_block]
        st = self.stats
        resid = st.mean - b0 - self.cell_design @ (c * std)
        rss = st.ssw + st.count @ resid**2
        return std, log_sigma, h, c, dsc, resid, rss

    def log_density(self, x: np.ndarray) -> float:
        std, log_sigma, h, *_, rss = self._parts(x)
        lp = -self.stats.N * log_sigma - 0.5 * rss * np.exp(-2 * log_sigma)
        lp += -0.5 * std @ std
        # log-Jacobians of sigma = exp(.) and of each hyper coordinate
        lp += log_sigma + h.sum()
        return float(lp)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_gradient(x)[1]

    def value_and_gradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        std, log_sigma, h, c, dsc, resid, rss = self._parts(x)
        p = self.p
        inv_var = np.exp(-2 * log_sigma)
        N = self.stats.N
        lp = -N * log_sigma - 0.5 * rss * inv_var - 0.5 * std @ std + log_sigma + h.sum()

        w = self.stats.count * resid * inv_var  # d loglik / d mu per cell
        g_unit = self.cell_design.T @ w  # d loglik / d (c * std)
        g = np.empty(self.dim)
        g[:p] = c * g_unit - std
        g[p] = w.sum()
        g[p + 1] = -N + rss * inv_var + 1.0
        per_block = np.bincount(self.col_block, weights=g_unit * std, minlength=3)
        if self.kind is ModelKind.RR:
            g[p + 2] = dsc[0] * per_block.sum() + 1.0
        else:
            g[p + 2 :] = dsc * per_block + 1.0
        return float(lp), g


def log_posterior(
    kind: ModelKind | str,
    u: UnconstrainedParams,
    data: Dataset,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> float:
    """Log posterior at ``u``: likelihood, standard-normal ``std`` prior, Jacobians."""
    post = Posterior(kind, data, sigma_floor)
    u.check(post.kind, post.spec)
    return post.log_density(u.to_vector())


def grad_log_posterior(
    kind: ModelKind | str,
    u: UnconstrainedParams,
    data: Dataset,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> np.ndarray:
    """Analytic gradient of :func:`log_posterior`, laid out as ``u.to_vector()``."""
    post = Posterior(kind, data, sigma_floor)
    u.check(post.kind, post.spec)
    return post.gradient(u.to_vector())
