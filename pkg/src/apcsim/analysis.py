"""Linear/nonlinear decomposition, the bias scalar ``s`` and the results grid.

The likelihood cannot see the direction ``t * (vA, -vP, vC)``, so an
estimate can differ from the truth along it at no cost in fit. ``bias_s``
measures exactly that discrepancy; the nonlinear residuals, orthogonal to the
centering indexes, are identified and should match the truth up to noise.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datagen import CaseSpec, EffectSet, artificial_effects, enumerate_cases, generate_dataset
from .errors import InputDomainError
from .grid import CenteringIndexes, GridSpec, centering_indexes
from .inference import FitConfig, FitResult, fit
from .models import ModelKind

log = logging.getLogger(__name__)

GRADE_EDGES = ((0.02, "A"), (0.04, "B"), (0.06, "C"), (0.08, "D"))


@dataclass(frozen=True)
class Decomposition:
    """Per-block slope on the centering index and the orthogonal remainder."""

    sA: float
    sP: float
    sC: float
    nlA: np.ndarray
    nlP: np.ndarray
    nlC: np.ndarray

    @property
    def slopes(self) -> tuple[float, float, float]:
        return (self.sA, self.sP, self.sC)

    @property
    def nonlinear(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.nlA, self.nlP, self.nlC)

    def recompose(self, v: CenteringIndexes, b0: float = 0.0) -> EffectSet:
        return EffectSet(
            b0,
            self.sA * v.vA + self.nlA,
            self.sP * v.vP + self.nlP,
            self.sC * v.vC + self.nlC,
        )

    def to_dict(self) -> dict:
        return {
            "sA": self.sA,
            "sP": self.sP,
            "sC": self.sC,
            "nlA": self.nlA.tolist(),
            "nlP": self.nlP.tolist(),
            "nlC": self.nlC.tolist(),
        }


def _check_shapes(effects: EffectSet, v: CenteringIndexes) -> None:
    if effects.shape != (len(v.vA), len(v.vP), len(v.vC)):
        raise InputDomainError(
            f"effect lengths {effects.shape} do not match centering indexes "
            f"{(len(v.vA), len(v.vP), len(v.vC))}"
        )


def decompose(effects: EffectSet, v: CenteringIndexes) -> Decomposition:
    """Regress each block on its centering index.

    Examples
    --------
    >>> from apcsim.grid import GridSpec, centering_indexes
    >>> v = centering_indexes(GridSpec(3, 3))
    >>> d = decompose(EffectSet(0.0, 2 * v.vA, v.vP * 0, v.vC), v)
    >>> d.sA, d.sP, d.sC
    (2.0, 0.0, 1.0)
    """
    _check_shapes(effects, v)
    slopes, rests = [], []
    for blk, vec in zip(effects.blocks, (v.vA, v.vP, v.vC)):
        slope = float(blk @ vec / (vec @ vec))
        slopes.append(slope)
        rests.append(blk - slope * vec)
    return Decomposition(*slopes, *rests)


def bias_s(estimate: EffectSet, truth: EffectSet, v: CenteringIndexes) -> float:
    """Least-squares coefficient of the gauge direction in ``estimate - truth``.

    Minimizes ``f(s) = |dA - s vA|^2 + |dP + s vP|^2 + |dC - s vC|^2`` where
    ``d = estimate - truth`` block by block. ``f`` is a quadratic in ``s``
    with positive leading coefficient, so the stationary point is the
    minimizer.
    """
    _check_shapes(estimate, v)
    _check_shapes(truth, v)
    dA = estimate.age - truth.age
    dP = estimate.period - truth.period
    dC = estimate.cohort - truth.cohort
    num = dA @ v.vA - dP @ v.vP + dC @ v.vC
    den = v.vA @ v.vA + v.vP @ v.vP + v.vC @ v.vC
    return float(num / den)


def bias_objective(s: float, estimate: EffectSet, truth: EffectSet, v: CenteringIndexes) -> float:
    """``f(s)`` itself, for diagnostics and numeric cross-checks."""
    dA = estimate.age - truth.age - s * v.vA
    dP = estimate.period - truth.period + s * v.vP
    dC = estimate.cohort - truth.cohort - s * v.vC
    return float(dA @ dA + dP @ dP + dC @ dC)


def grade(s: float) -> str:
    """Letter grade of ``|s|`` with half-open bins of width 0.02."""
    if not np.isfinite(s):
        raise InputDomainError(f"cannot grade a non-finite bias {s}")
    a = abs(s)
    for edge, letter in GRADE_EDGES:
        if a < edge:
            return letter
    return "E"


@dataclass
class BiasReport:
    case_id: int
    case: CaseSpec
    model: ModelKind
    s: float
    grade: str
    decomposition: Decomposition
    fit_meta: dict = field(default_factory=dict)
    nonlinear_error: float = float("nan")

    @property
    def converged(self) -> bool:
        return bool(self.fit_meta.get("converged", False))

    def to_dict(self) -> dict:
        return {
            "case": self.case_id,
            "signs": self.case.label,
            "A": self.case.signA,
            "P": self.case.signP,
            "C": self.case.signC,
            "model": self.model.value,
            "s": self.s,
            "grade": self.grade,
            "converged": self.converged,
            "nonlinear_error": self.nonlinear_error,
            "decomposition": self.decomposition.to_dict(),
            "fit": self.fit_meta,
        }


def nonlinear_error(estimate: EffectSet, truth: EffectSet, v: CenteringIndexes) -> float:
    """Largest absolute gap between the nonlinear residuals of two effect sets."""
    de, dt = decompose(estimate, v), decompose(truth, v)
    return float(max(np.max(np.abs(a - b)) for a, b in zip(de.nonlinear, dt.nonlinear)))


def evaluate_fit(
    case_id: int, case: CaseSpec, truth: EffectSet, result: FitResult, v: CenteringIndexes
) -> BiasReport:
    """Score one fit against the effects that generated its data."""
    meta = {
        "converged": result.converged,
        "max_rhat": result.max_rhat,
        "sigma_hat": result.sigma_hat,
        "hyper_hat": result.hyper_hat,
        "point": result.point.to_dict(),
    }
    if not np.all(np.isfinite(result.point.stacked())):
        nan = np.full
        dec = Decomposition(
            *(float("nan"),) * 3, nan(len(v.vA), np.nan), nan(len(v.vP), np.nan), nan(len(v.vC), np.nan)
        )
        meta["converged"] = False
        return BiasReport(case_id, case, result.kind, float("nan"), "E", dec, meta)
    s = bias_s(result.point, truth, v)
    return BiasReport(
        case_id,
        case,
        result.kind,
        s,
        grade(s),
        decompose(result.point, v),
        meta,
        nonlinear_error(result.point, truth, v),
    )


def case_seed(master_seed: int, case_id: int) -> int:
    """Per-case seed, so any one case can be rerun on its own."""
    return master_seed + case_id


def _grid_cell(args) -> BiasReport:
    spec, case_id, case, kind, cfg = args
    seed = case_seed(cfg.seed, case_id)
    truth = artificial_effects(case, spec)
    data = generate_dataset(truth, spec, seed, case)
    result = fit(kind, data, cfg.replace(seed=seed))
    return evaluate_fit(case_id, case, truth, result, centering_indexes(spec))


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def run_grid(
    spec: GridSpec,
    cases: list[CaseSpec] | None = None,
    models: list[ModelKind | str] | None = None,
    cfg: FitConfig | None = None,
    jobs: int | None = None,
    case_ids: list[int] | None = None,
) -> list[BiasReport]:
    """Fit every (case, model) pair and score it.

    Data for case ``c`` are drawn with seed ``cfg.seed + c`` and the fit uses
    the same seed. Reports come back ordered by case, then by the order of
    ``models``, whatever the worker count.

    Parameters
    ----------
    cases : list of CaseSpec, optional
        Defaults to the 13 canonical cases.
    case_ids : list of int, optional
        Case numbers used for seeding; defaults to ``1..len(cases)``.
    jobs : int, optional
        Worker processes; defaults to the CPUs available to this process.
    """
    cfg = cfg or FitConfig()
    cases = list(cases) if cases is not None else enumerate_cases()
    kinds = [ModelKind.parse(m) for m in (models or list(ModelKind))]
    if case_ids is None:
        case_ids = list(range(1, len(cases) + 1))
    if len(case_ids) != len(cases):
        raise InputDomainError("case_ids and cases differ in length")
    if spec.gamma is None:
        raise InputDomainError("the grid generates data, so it needs a noise level gamma")
    tasks = [(spec, cid, case, kind, cfg) for cid, case in zip(case_ids, cases) for kind in kinds]
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    t0 = time.perf_counter()
    if jobs == 1 or len(tasks) == 1:
        reports = [_grid_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            reports = list(pool.map(_grid_cell, tasks))
    log.info("grid of %d fits finished in %.1f s", len(tasks), time.perf_counter() - t0)
    for r in reports:
        if not r.converged:
            log.warning("case %d, model %s did not converge", r.case_id, r.model.value)
    return reports
