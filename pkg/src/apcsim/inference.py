"""MAP estimation and MCMC sampling for the three regularized APC models.

Both fitting routes work with :class:`~apcsim.marginal.MarginalPosterior`,
where the effects are integrated out analytically:

* ``map_fit`` runs BFGS on the log marginal density of the scale
  coordinates and then takes the conditional mode of the effects. The joint
  density in non-centered coordinates has no interior maximum under flat
  scale priors (pushing a scale up while shrinking ``std`` always gains), so
  the scales are estimated from the marginal instead.
* ``mcmc_fit`` defaults to the collapsed sampler: adaptive random-walk
  Metropolis on the scale coordinates plus an exact Gaussian draw of the
  effects for every retained iteration. ``sampler="hmc"`` instead runs
  Hamiltonian Monte Carlo on the full joint density with the analytic
  gradient, which is slower but shares no code with the marginalization.

Each chain owns a generator spawned from ``SeedSequence(seed)`` so results are
reproducible bit for bit and independent of execution order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .datagen import Dataset, EffectSet
from .errors import InputDomainError
from .marginal import MarginalPosterior, MarginalState
from .models import ModelKind, Posterior, std_from_effects

log = logging.getLogger(__name__)

METHODS = ("map", "mcmc")
SAMPLERS = ("collapsed", "hmc")


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by MAP and MCMC fits.

    The sampling defaults (4 chains of 6000 iterations, 1000 warmup, thin 5)
    and the RE scale floor of 0.05 are the study defaults.
    """

    method: str = "mcmc"
    chains: int = 4
    iterations: int = 6000
    warmup: int = 1000
    thin: int = 5
    seed: int = 1234
    restarts: int = 8
    sigma_floor: float = 0.05
    rhat_threshold: float = 1.05
    sampler: str = "collapsed"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputDomainError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.sampler not in SAMPLERS:
            raise InputDomainError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.chains < 1 or self.thin < 1 or self.restarts < 1:
            raise InputDomainError("chains, thin and restarts must be >= 1")
        if not 0 <= self.warmup < self.iterations:
            raise InputDomainError("need 0 <= warmup < iterations")
        if self.sigma_floor < 0:
            raise InputDomainError("sigma_floor must be non-negative")

    def replace(self, **changes) -> FitConfig:
        return FitConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    kind: ModelKind
    method: str
    point: EffectSet
    sigma_hat: float
    hyper_hat: dict[str, float]
    log_posterior_at_point: float
    converged: bool
    rhat: dict[str, float] | None = None
    diagnostics: dict = field(default_factory=dict)
    draws: dict[str, np.ndarray] | None = field(default=None, repr=False)

    @property
    def max_rhat(self) -> float | None:
        if not self.rhat:
            return None
        return max(self.rhat.values())

    def to_dict(self) -> dict:
        return {
            "model": self.kind.value,
            "method": self.method,
            "point": self.point.to_dict(),
            "sigma_hat": self.sigma_hat,
            "hyper_hat": dict(self.hyper_hat),
            "rhat": None if self.rhat is None else dict(self.rhat),
            "max_rhat": self.max_rhat,
            "log_posterior_at_point": self.log_posterior_at_point,
            "converged": self.converged,
            "centering": "block means swept into the intercept after fitting",
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------- diagnostics


def _split_rhat(draws: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction along axis 1 of (chains, draws, P)."""
    m, n = draws.shape[:2]
    half = n // 2
    pieces = np.concatenate([draws[:, :half], draws[:, n - half :]], axis=0)
    means = pieces.mean(axis=1)
    W = pieces.var(axis=1, ddof=1).mean(axis=0)
    B = half * means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * W + B / half
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    r = np.where(W > 0, r, np.inf)
    # values under 1 carry no extra information; they are reported as 1
    return np.maximum(r, 1.0)


def rhat(chains_draws) -> float:
    """Split R-hat of one scalar quantity.

    Parameters
    ----------
    chains_draws : array_like, shape (chains, draws)
        Post-warmup draws, one row per chain. At least 2 chains of at least
        4 draws.

    Returns
    -------
    float
        The potential scale reduction; ``inf`` when the within-chain variance
        is zero.
    """
    a = np.asarray(chains_draws, dtype=float)
    if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 4:
        raise InputDomainError("rhat needs at least 2 chains of at least 4 draws")
    return float(_split_rhat(a[:, :, None])[0])


# ---------------------------------------------------------------- MAP


def _crude_log_sigma(post: Posterior) -> float:
    st = post.stats
    dof = st.N - len(st.count)
    if dof > 0 and st.ssw > 0:
        return 0.5 * math.log(st.ssw / dof)
    spread = float(np.std(st.mean)) if len(st.mean) > 1 else 0.0
    return math.log(spread) if spread > 0 else 0.0


def _grad_tol(value: float) -> float:
    return 1e-8 * (1.0 + abs(value))


def _newton_polish(marg: MarginalPosterior, state: MarginalState, max_iter: int = 50):
    """Newton steps with a finite-difference Hessian of the analytic gradient."""
    for _ in range(max_iter):
        if np.linalg.norm(state.grad) <= _grad_tol(state.value):
            break
        H = _marginal_hessian(marg, state.theta)
        try:
            step = -np.linalg.solve(H, state.grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.linalg.eigvalsh(H) < 0):
            step = state.grad * 1e-3
        t = 1.0
        while t > 1e-6:
            cand = marg.evaluate(state.theta + t * step)
            if np.isfinite(cand.value) and cand.value >= state.value - 1e-12 * abs(state.value):
                break
            t *= 0.5
        else:
            break
        state = cand
    return state


def _optimize_marginal(marg: MarginalPosterior, theta0: np.ndarray):
    def fun(theta):
        with np.errstate(all="ignore"):
            st = marg.evaluate(theta)
        if not np.isfinite(st.value) or not np.all(np.isfinite(st.grad)):
            return np.inf, np.zeros_like(theta)
        return -st.value, -st.grad

    res = optimize.minimize(
        fun, theta0, jac=True, method="BFGS", options={"maxiter": 10_000, "gtol": 1e-10}
    )
    state = marg.evaluate(res.x)
    if not np.isfinite(state.value):
        return None, res
    return _newton_polish(marg, state), res


def map_fit(kind: ModelKind | str, data: Dataset, cfg: FitConfig | None = None) -> FitResult:
    """Posterior mode of the effects at the modal prior and residual scales.

    Runs ``cfg.restarts`` quasi-Newton searches from seeded random starts and
    keeps the best. Non-convergence is reported through
    ``FitResult.converged``; it never raises.
    """
    cfg = (cfg or FitConfig()).replace(method="map")
    kind = ModelKind.parse(kind)
    post = Posterior(kind, data, cfg.sigma_floor)
    marg = MarginalPosterior(post)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    ls0 = _crude_log_sigma(post)

    best = None
    attempts = []
    for r in range(cfg.restarts):
        init = rng.normal(0.0, 0.5, size=marg.n_theta)
        init[0] += ls0
        try:
            state, res = _optimize_marginal(marg, init)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            attempts.append({"restart": r, "status": f"failed: {exc}"})
            continue
        if state is None:
            attempts.append({"restart": r, "status": "failed: non-finite objective"})
            continue
        gnorm = float(np.linalg.norm(state.grad))
        ok = gnorm <= _grad_tol(state.value)
        attempts.append(
            {"restart": r, "value": state.value, "grad_norm": gnorm, "converged": ok, "iterations": int(res.nit)}
        )
        if best is None or state.value > best[0].value:
            best = (state, ok)

    if best is None:
        return _failed_result(kind, "map", post, {"restarts": attempts})

    state, ok = best
    x = marg.joint_point(state)
    sc, _ = post.scales(state.theta[1:])
    return FitResult(
        kind=kind,
        method="map",
        point=post.effects(x).centered(),
        sigma_hat=state.sigma,
        hyper_hat=_hyper_dict(kind, sc),
        log_posterior_at_point=post.log_density(x),
        converged=bool(ok),
        diagnostics={
            "log_marginal_at_mode": state.value,
            "marginal_grad_norm": float(np.linalg.norm(state.grad)),
            "theta": state.theta.tolist(),
            "restarts": attempts,
        },
    )


def _hyper_dict(kind: ModelKind, scales: np.ndarray) -> dict[str, float]:
    if kind is ModelKind.RR:
        return {"lambda": float(scales[0])}
    return {name: float(v) for name, v in zip(kind.hyper_names, scales)}


def _failed_result(kind, method, post: Posterior, diagnostics) -> FitResult:
    spec = post.spec
    nan = np.full
    return FitResult(
        kind=kind,
        method=method,
        point=EffectSet(np.nan, nan(spec.I, np.nan), nan(spec.J, np.nan), nan(spec.K, np.nan)),
        sigma_hat=float("nan"),
        hyper_hat={name: float("nan") for name in kind.hyper_names},
        log_posterior_at_point=float("nan"),
        converged=False,
        rhat=None,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------- collapsed sampler


def _adaptation_windows(warmup: int) -> list[int]:
    """End points of the covariance-estimation windows inside warmup."""
    init, term, base = 75, 50, 25
    if warmup < init + term + base:
        return []
    ends = []
    start, width = init, base
    last = warmup - term
    while start < last:
        end = start + width
        if end + 2 * width > last:
            end = last
        ends.append(end)
        start, width = end, 2 * width
    return ends


class _Proposal:
    """Gaussian random-walk proposal with a tuned scale and covariance."""

    target = 0.3

    def __init__(self, dim: int, scale: float):
        self.dim = dim
        self.log_scale = math.log(scale)
        self.chol = np.eye(dim)
        self._t = 0
        self._mu = self.log_scale

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return math.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.dim))

    def adapt_scale(self, accept_prob: float):
        self._t += 1
        self.log_scale += (accept_prob - self.target) / self._t**0.6
        self.log_scale = min(max(self.log_scale, self._mu - 12.0), self._mu + 5.0)

    def set_covariance(self, samples: np.ndarray):
        n = len(samples)
        cov = np.cov(samples, rowvar=False).reshape(self.dim, self.dim)
        cov = (n / (n + 5.0)) * cov + 1e-6 * (5.0 / (n + 5.0)) * np.eye(self.dim)
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            self.chol = np.diag(np.sqrt(np.maximum(np.diag(cov), 1e-10)))
        self.log_scale = self._mu = math.log(2.38 / math.sqrt(self.dim))
        self._t = 0


class _ModeJump:
    """Independence proposal: a Student-t mixture over located marginal modes.

    Mixed into the random-walk kernel with a small probability, it lets a
    chain leave a minor mode that a local proposal would need astronomically
    many steps to escape. The proposal is fixed before sampling starts, so the
    Metropolis-Hastings correction keeps the target exact.
    """

    df = 5.0
    inflate = 1.2

    def __init__(self, modes: list[tuple[np.ndarray, np.ndarray]]):
        self.means = [m for m, _ in modes]
        self.chols = [np.linalg.cholesky(cov) * self.inflate for _, cov in modes]
        self.inv_chols = [np.linalg.inv(L) for L in self.chols]
        self.log_dets = [float(np.sum(np.log(np.diag(L)))) for L in self.chols]
        self.dim = len(self.means[0])

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        c = int(rng.integers(len(self.means)))
        z = rng.standard_normal(self.dim)
        u = rng.chisquare(self.df)
        return self.means[c] + self.chols[c] @ z * math.sqrt(self.df / u)

    def log_density(self, x: np.ndarray) -> float:
        d, nu = self.dim, self.df
        terms = []
        for mu, Li, ld in zip(self.means, self.inv_chols, self.log_dets):
            r = Li @ (x - mu)
            terms.append(-ld - 0.5 * (nu + d) * math.log1p(r @ r / nu))
        top = max(terms)
        return top + math.log(sum(math.exp(t - top) for t in terms)) - math.log(len(terms))


def _marginal_hessian(marg: MarginalPosterior, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    d = len(theta)
    H = np.empty((d, d))
    for a in range(d):
        e = np.zeros(d)
        e[a] = eps
        H[:, a] = (marg.evaluate(theta + e).grad - marg.evaluate(theta - e).grad) / (2 * eps)
    return 0.5 * (H + H.T)


def _locate_modes(
    marg: MarginalPosterior, rng: np.random.Generator, starts: int, ls0: float
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Distinct local maxima of the marginal with their Laplace covariances."""
    found: list[tuple[float, np.ndarray, np.ndarray]] = []
    for _ in range(starts):
        init = np.empty(marg.n_theta)
        init[0] = ls0 + rng.uniform(-1.0, 1.0)
        init[1:] = rng.uniform(-4.0, 1.0, size=marg.n_theta - 1)
        try:
            with np.errstate(all="ignore"):
                state, _ = _optimize_marginal(marg, init)
                if state is None:
                    continue
                H = _marginal_hessian(marg, state.theta)
            if not np.all(np.isfinite(H)) or not np.all(np.linalg.eigvalsh(H) < 0):
                continue
            cov = np.linalg.inv(-H)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            continue
        if any(np.max(np.abs(state.theta - t)) < 1e-3 for _, t, _ in found):
            continue
        found.append((state.value, state.theta, cov))
    found.sort(key=lambda f: -f[0])
    return [(t, c) for _, t, c in found]


JUMP_PROB = 0.1


def _collapsed_chain(
    marg: MarginalPosterior,
    cfg: FitConfig,
    rng: np.random.Generator,
    ls0: float,
    jumper: _ModeJump | None = None,
):
    """One chain of the collapsed sampler; returns (draws, info) or raises."""
    d = marg.n_theta
    for attempt in range(3):
        theta = np.empty(d)
        theta[0] = ls0 + rng.uniform(-1.0, 1.0)
        theta[1:] = rng.uniform(-2.0, 2.0, size=d - 1)
        value = marg.log_density(theta)
        if not np.isfinite(value):
            continue
        prop = _Proposal(d, 0.1 / 10**attempt)
        windows = _adaptation_windows(cfg.warmup)
        window_start = 75 if windows else 0
        history = np.empty((cfg.warmup, d))
        kept = []
        accepted_warm = accepted = jumps = 0
        for it in range(cfg.iterations):
            jump = jumper is not None and rng.uniform() < JUMP_PROB
            cand = jumper.draw(rng) if jump else theta + prop.draw(rng)
            with np.errstate(all="ignore"):
                cand_value = marg.log_density(cand)
                log_ratio = cand_value - value
                if jump:
                    log_ratio += jumper.log_density(theta) - jumper.log_density(cand)
            a = math.exp(min(0.0, log_ratio)) if np.isfinite(log_ratio) else 0.0
            if rng.uniform() < a:
                theta, value = cand, cand_value
                jumps += jump
                if it < cfg.warmup:
                    accepted_warm += 1
                else:
                    accepted += 1
            if it < cfg.warmup:
                history[it] = theta
                if not jump:
                    prop.adapt_scale(a)
                if windows and it + 1 == windows[0]:
                    prop.set_covariance(history[window_start : it + 1])
                    window_start = windows.pop(0)
            elif (it - cfg.warmup) % cfg.thin == 0:
                kept.append(marg.draw_at(theta, rng))
        if cfg.warmup and accepted_warm == 0:
            log.warning("chain never moved during warmup; restarting with a smaller step")
            continue
        n_post = cfg.iterations - cfg.warmup
        info = {
            "attempts": attempt + 1,
            "accept_rate": accepted / max(n_post, 1),
            "step_scale": math.exp(prop.log_scale),
            "accepted_jumps": int(jumps),
        }
        return np.array(kept), info
    raise FloatingPointError("collapsed sampler failed to initialize or move")


# ---------------------------------------------------------------- joint HMC


def _hmc_chain(post: Posterior, cfg: FitConfig, rng: np.random.Generator, ls0: float):
    """Static-length HMC on the joint density with warmup-tuned step and metric."""
    dim = post.dim
    p = post.p
    mean_y = float(post.stats.count @ post.stats.mean / max(post.stats.N, 1))
    target = 0.8
    for attempt in range(3):
        x = rng.uniform(-2.0, 2.0, size=dim)
        x[p] += mean_y
        x[p + 1] = ls0 + rng.uniform(-1.0, 1.0)
        with np.errstate(all="ignore"):
            lp, g = post.value_and_gradient(x)
        if not np.isfinite(lp):
            continue
        inv_metric = np.ones(dim)
        eps = 0.05 / 10**attempt
        # dual averaging state
        mu, log_eps_bar, h_bar, k = math.log(10 * eps), 0.0, 0.0, 0
        windows = _adaptation_windows(cfg.warmup)
        window_start = 75 if windows else 0
        history = np.empty((cfg.warmup, dim))
        kept = []
        divergent = 0
        accept_sum = 0.0
        for it in range(cfg.iterations):
            step = eps if it < cfg.warmup else math.exp(log_eps_bar)
            step *= rng.uniform(0.9, 1.1)
            n_leap = min(max(1, int(round(1.5 / step))), 512)
            mom = rng.standard_normal(dim) / np.sqrt(inv_metric)
            h0 = -lp + 0.5 * np.sum(inv_metric * mom**2)
            xn, gn, lpn = x.copy(), g.copy(), lp
            mn = mom + 0.5 * step * gn
            ok = True
            with np.errstate(all="ignore"):
                for leap in range(n_leap):
                    xn = xn + step * inv_metric * mn
                    lpn, gn = post.value_and_gradient(xn)
                    if not np.isfinite(lpn):
                        ok = False
                        break
                    mn = mn + (step if leap < n_leap - 1 else 0.5 * step) * gn
            h1 = -lpn + 0.5 * np.sum(inv_metric * mn**2) if ok else np.inf
            if not np.isfinite(h1) or h1 - h0 > 1000:
                divergent += 1
                a = 0.0
            else:
                a = math.exp(min(0.0, h0 - h1))
            if rng.uniform() < a:
                x, g, lp = xn, gn, lpn
            if it < cfg.warmup:
                k += 1
                h_bar = (1 - 1 / (k + 10)) * h_bar + (target - a) / (k + 10)
                log_eps = mu - math.sqrt(k) / 0.05 * h_bar
                log_eps_bar = k**-0.75 * log_eps + (1 - k**-0.75) * log_eps_bar
                eps = math.exp(log_eps)
                history[it] = x
                if windows and it + 1 == windows[0]:
                    seg = history[window_start : it + 1]
                    n = len(seg)
                    var = seg.var(axis=0, ddof=1)
                    inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    window_start = windows.pop(0)
                    mu, log_eps_bar, h_bar, k = math.log(10 * eps), 0.0, 0.0, 0
            else:
                accept_sum += a
                if (it - cfg.warmup) % cfg.thin == 0:
                    kept.append(x.copy())
        n_post = cfg.iterations - cfg.warmup
        info = {
            "attempts": attempt + 1,
            "accept_rate": accept_sum / max(n_post, 1),
            "step_size": math.exp(log_eps_bar),
            "divergent": divergent,
        }
        return np.array(kept), info
    raise FloatingPointError("HMC failed to initialize")


# ---------------------------------------------------------------- MCMC driver


def _chain_rngs(seed: int, chains: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(chains)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def _summaries(post: Posterior, draws: np.ndarray) -> dict[str, np.ndarray]:
    """Constrained, centered quantities for draws of shape (chains, n, dim)."""
    kind = post.kind
    spec = post.spec
    p = post.p
    flat = draws.reshape(-1, post.dim)
    h = flat[:, p + 2 :]
    if kind is ModelKind.RR:
        per_block = np.repeat(np.exp(h[:, 0])[None, :], 3, axis=0)
    else:
        per_block = post.sigma_floor + np.exp(h.T)  # floor is 0 outside RE
    c = per_block[post.col_block]  # (p, n)
    b = (post.basis @ (c * flat[:, :p].T)).T  # (n, L)
    I, J = spec.I, spec.J
    blocks = [b[:, :I], b[:, I : I + J], b[:, I + J :]]
    means = [blk.mean(axis=1) for blk in blocks]
    b0 = flat[:, p] + sum(means)
    centered = np.concatenate([blk - m[:, None] for blk, m in zip(blocks, means)], axis=1)
    shape = draws.shape[:2]
    out = {
        "b0": b0.reshape(shape),
        "effects": centered.reshape(*shape, spec.L),
        "sigma": np.exp(flat[:, p + 1]).reshape(shape),
    }
    if kind is ModelKind.RR:
        out["lambda"] = np.exp(h[:, 0]).reshape(shape)
    else:
        for a, name in enumerate(kind.hyper_names):
            out[name] = per_block[a].reshape(shape)
    return out


def _param_names(kind: ModelKind, I: int, J: int, K: int) -> list[str]:
    names = ["b0"]
    names += [f"b_A[{i}]" for i in range(1, I + 1)]
    names += [f"b_P[{j}]" for j in range(1, J + 1)]
    names += [f"b_C[{k}]" for k in range(1, K + 1)]
    names += ["sigma", *kind.hyper_names]
    return names


def mcmc_fit(kind: ModelKind | str, data: Dataset, cfg: FitConfig | None = None) -> FitResult:
    """Sample the posterior and summarize it by per-coordinate medians.

    The point estimate is the median of each reporting-centered effect; the
    median vector is centered once more so every block sums to zero exactly.
    ``converged`` holds when every parameter's split R-hat is under
    ``cfg.rhat_threshold``.
    """
    cfg = (cfg or FitConfig()).replace(method="mcmc")
    kind = ModelKind.parse(kind)
    post = Posterior(kind, data, cfg.sigma_floor)
    spec = post.spec
    ls0 = _crude_log_sigma(post)
    rngs = _chain_rngs(cfg.seed, cfg.chains)
    chain_draws, chain_info = [], []
    modes: list = []
    try:
        if cfg.sampler == "collapsed":
            marg = MarginalPosterior(post)
            mode_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(cfg.chains,))))
            modes = _locate_modes(marg, mode_rng, cfg.restarts, ls0)
            jumper = _ModeJump(modes) if modes else None
            for rng in rngs:
                dr, info = _collapsed_chain(marg, cfg, rng, ls0, jumper)
                chain_draws.append(dr)
                chain_info.append(info)
        else:
            for rng in rngs:
                dr, info = _hmc_chain(post, cfg, rng, ls0)
                chain_draws.append(dr)
                chain_info.append(info)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return _failed_result(kind, "mcmc", post, {"error": str(exc), "chains": chain_info})

    draws = np.stack(chain_draws)
    summ = _summaries(post, draws)
    cols = [summ["b0"][:, :, None], summ["effects"], summ["sigma"][:, :, None]]
    cols += [summ[name][:, :, None] for name in kind.hyper_names]
    table = np.concatenate(cols, axis=2)
    names = _param_names(kind, spec.I, spec.J, spec.K)

    if cfg.chains >= 2 and table.shape[1] >= 4:
        rhats = _split_rhat(table)
        rhat_map = {n: float(r) for n, r in zip(names, rhats)}
        converged = bool(np.all(rhats < cfg.rhat_threshold))
    else:
        rhat_map = None
        converged = False

    med = np.median(table.reshape(-1, table.shape[2]), axis=0)
    L = spec.L
    point = EffectSet.from_stacked(med[0], med[1 : 1 + L], spec.I, spec.J).centered()
    sigma_hat = float(med[1 + L])
    hyper = med[2 + L :]
    hyper_hat = {name: float(v) for name, v in zip(kind.hyper_names, hyper)}

    scales = np.repeat(hyper, 3) if kind is ModelKind.RR else hyper
    std = std_from_effects(kind, point, scales)
    if kind is ModelKind.RE:
        h = np.log(np.maximum(hyper - post.sigma_floor, 1e-300))
    else:
        h = np.log(hyper)
    x = np.concatenate([*std, [point.b0, math.log(sigma_hat)], h])
    lp = post.log_density(x)

    return FitResult(
        kind=kind,
        method="mcmc",
        point=point,
        sigma_hat=sigma_hat,
        hyper_hat=hyper_hat,
        log_posterior_at_point=lp,
        converged=converged,
        rhat=rhat_map,
        diagnostics={
            "sampler": cfg.sampler,
            "draws_per_chain": int(draws.shape[1]),
            "modes_located": len(modes) if cfg.sampler == "collapsed" else None,
            "chains": chain_info,
        },
        draws={"names": np.array(names), "table": table},
    )


def fit(kind: ModelKind | str, data: Dataset, cfg: FitConfig | None = None) -> FitResult:
    """Dispatch on ``cfg.method``."""
    cfg = cfg or FitConfig()
    if cfg.method == "map":
        return map_fit(kind, data, cfg)
    return mcmc_fit(kind, data, cfg)
