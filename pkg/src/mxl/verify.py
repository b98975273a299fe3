"""Independent oracles and statistical estimators for desk-scale convergence checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .games import GameModel, nash_residual
from .solver import SolverConfig, initial_state, mxl_step, profile_kl
from .spectral import nuclear_norm, trace_inner


class ConvergenceError(RuntimeError):
    """Best-response iteration cycled or stalled above tolerance."""


def _best_response_grid(game: GameModel, i: int, actions, levels: int = 65,
                        bisections: int = 60):
    """Scalar best response: coarse utility grid, then bisection on the own-gradient sign.

    Pure grid search can only localise a flat concave peak to about sqrt(eps);
    the gradient sign pins it to machine precision.
    """
    bound = game.players[i].domain.trace_bound
    work = list(actions)

    def slope(v: float) -> float:
        work[i] = np.array([[v]], dtype=complex)
        return float(game.payoff_gradient(i, tuple(work))[0, 0].real)

    if slope(0.0) <= 0.0:
        return np.array([[0.0]], dtype=complex)
    if slope(bound) >= 0.0:
        return np.array([[bound]], dtype=complex)
    grid = np.linspace(0.0, bound, levels)
    vals = []
    for g in grid:
        work[i] = np.array([[g]], dtype=complex)
        vals.append(game.utility(i, tuple(work)))
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, levels - 1)]
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return np.array([[0.5 * (lo + hi)]], dtype=complex)


def _best_response_pg(game: GameModel, i: int, actions, max_iters: int = 600,
                      tol: float = 1e-11):
    """Projected gradient ascent on player i's own concave objective.

    Uses spectral (Barzilai-Borwein) step lengths with a halving fallback
    whenever a step would decrease the objective.
    """
    domain = game.players[i].domain
    work = list(actions)
    x = np.array(actions[i], dtype=complex)
    work[i] = x
    value = game.utility(i, tuple(work))
    grad = game.payoff_gradient(i, tuple(work))
    step = 1.0
    for _ in range(max_iters):
        moved = False
        for _ in range(50):
            cand = domain.project(x + step * grad)
            work[i] = cand
            cand_value = game.utility(i, tuple(work))
            if cand_value >= value - 1e-14:
                moved = True
                break
            step *= 0.5
        if not moved:
            work[i] = x
            break
        cand_grad = game.payoff_gradient(i, tuple(work))
        dx = cand - x
        dg = cand_grad - grad
        shift = float(np.linalg.norm(dx))
        x, value, grad = cand, cand_value, cand_grad
        denom = abs(float(np.vdot(dx, dg).real))
        if denom > 1e-300:
            step = min(max(float(np.vdot(dx, dx).real) / denom, 1e-8), 1e8)
        else:
            step *= 1.6
        if shift < tol:
            break
    work[i] = x
    return x


def brute_force_ne(game: GameModel, tol: float = 1e-8, max_sweeps: int = 400):
    """Cyclic best-response fixed point, usable as an equilibrium oracle.

    Scalar games use grid best responses; matrix games use per-player projected
    gradient ascent. Raises ConvergenceError when sweeps stop improving while
    the residual is still above tolerance (cycling is reported, not accepted).
    """
    scalar = all(p.domain.dim == 1 for p in game.players)
    actions = list(game.center_profile())
    best_residual = float("inf")
    stall = 0
    for _ in range(max_sweeps):
        for i in range(game.n_players):
            if scalar:
                actions[i] = _best_response_grid(game, i, tuple(actions))
            else:
                actions[i] = _best_response_pg(game, i, tuple(actions))
        residual = nash_residual(game, tuple(actions))
        if residual <= tol:
            return tuple(actions)
        if residual >= best_residual - 1e-12:
            stall += 1
            if stall >= 8:
                raise ConvergenceError(
                    f"best-response iteration cycled at residual {residual:.3e} > tol {tol:.1e}"
                )
        else:
            stall = 0
            best_residual = residual
    raise ConvergenceError(
        f"best-response iteration did not reach tol {tol:.1e} in {max_sweeps} sweeps "
        f"(best residual {best_residual:.3e})"
    )


@dataclass
class StrongStabilityEstimate:
    """Sampled lower margin of the stability inequality relative to divergence."""

    b_hat: float
    samples: int
    violation_count: int
    rng_seed: int

    def to_dict(self) -> dict:
        return {
            "b_hat": self.b_hat,
            "samples": self.samples,
            "violation_count": self.violation_count,
            "rng_seed": self.rng_seed,
        }


def estimate_strong_stability(game: GameModel, xstar, samples: int,
                              seed: int = 0) -> StrongStabilityEstimate:
    """Estimate B as the sampled minimum of -tr[(X-X*)V(X)] / D(X*, X), clipped at 0."""
    game.require_feasible(xstar)
    rng = np.random.default_rng(seed)
    b_hat = float("inf")
    violations = 0
    for _ in range(samples):
        x = game.sample_profile(rng)
        div = profile_kl(game, xstar, x)
        if not (div > 1e-9) or not np.isfinite(div):
            continue
        v = game.gradient_profile(x)
        drift = sum(trace_inner(x[i] - xstar[i], v[i]) for i in range(game.n_players))
        ratio = -drift / div
        if ratio < 0:
            violations += 1
        b_hat = min(b_hat, ratio)
    if not np.isfinite(b_hat):
        b_hat = 0.0
    return StrongStabilityEstimate(float(max(b_hat, 0.0)), samples, violations, seed)


@dataclass
class RateFit:
    """Log-log fit of an averaged error metric against the iteration count."""

    checkpoints: tuple
    values: tuple
    slope: float
    slope_stderr: float
    stderrs: tuple
    metric: str
    seeds: int
    bound: tuple | None = None
    gamma_b: float | None = None
    gamma_b_flag: bool = False
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "checkpoints": list(self.checkpoints),
            "values": list(self.values),
            "stderrs": list(self.stderrs),
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "metric": self.metric,
            "seeds": self.seeds,
        }
        if self.bound is not None:
            out["bound"] = list(self.bound)
            out["gamma_b"] = self.gamma_b
            out["gamma_b_flag"] = self.gamma_b_flag
        out.update(self.extras)
        return out


def _profile_metric(game: GameModel, xstar, actions, metric: str) -> float:
    if metric == "kl":
        return profile_kl(game, xstar, actions)
    if metric == "nuclear_distance":
        return sum(
            nuclear_norm(np.asarray(a) - np.asarray(b)) for a, b in zip(actions, xstar)
        )
    raise ValueError(f"unknown metric {metric!r}")


def rate_experiment(game: GameModel, xstar, config_template: SolverConfig, seeds: int,
                    checkpoints, metric: str = "nuclear_distance",
                    b_hat: float | None = None, v_bound: float | None = None) -> RateFit:
    """Average `metric` over independent trajectories at the checkpoints and fit a slope.

    With b_hat and v_bound supplied and a gamma/n step sequence, the explicit
    divergence bound gamma^2 V^2 / ((B gamma - 1) n) is evaluated pointwise;
    gamma*B <= 1 is flagged rather than silently accepted.
    """
    checkpoints = tuple(int(c) for c in checkpoints)
    if len(checkpoints) < 4 or sorted(checkpoints) != list(checkpoints):
        raise ValueError("need >= 4 increasing checkpoints")
    if checkpoints[-1] < 100 * checkpoints[0]:
        raise ValueError("checkpoints must span at least two decades")
    if seeds < 2:
        raise ValueError("need >= 2 seeds")

    table = np.zeros((seeds, len(checkpoints)))
    children = np.random.SeedSequence(config_template.seed).spawn(seeds)
    for s, child in enumerate(children):
        rng = np.random.default_rng(child)
        state = initial_state(game, config_template.y0)
        marks = dict((c, idx) for idx, c in enumerate(checkpoints))
        for n in range(1, checkpoints[-1] + 1):
            state, _ = mxl_step(game, state, config_template.schedule, config_template.noise, rng)
            if n in marks:
                table[s, marks[n]] = _profile_metric(game, xstar, state.actions, metric)

    means = table.mean(axis=0)
    stderrs = table.std(axis=0, ddof=1) / np.sqrt(seeds)
    logs_n = np.log(np.asarray(checkpoints, dtype=float))
    logs_v = np.log(np.maximum(means, 1e-300))
    design = np.vstack([np.ones_like(logs_n), logs_n]).T
    coef, *_ = np.linalg.lstsq(design, logs_v, rcond=None)
    fitted = design @ coef
    dof = max(1, len(checkpoints) - 2)
    resid_var = float(np.sum((logs_v - fitted) ** 2)) / dof
    cov = resid_var * np.linalg.inv(design.T @ design)
    slope = float(coef[1])
    slope_stderr = float(np.sqrt(max(cov[1, 1], 0.0)))

    bound = None
    gamma_b = None
    flag = False
    if b_hat is not None and v_bound is not None:
        gamma = config_template.schedule.at(1)
        gamma_b = float(gamma * b_hat)
        flag = bool(gamma_b <= 1.0)
        if not flag:
            bound = tuple(
                gamma * gamma * v_bound * v_bound / ((b_hat * gamma - 1.0) * n)
                for n in checkpoints
            )
    return RateFit(
        checkpoints=checkpoints,
        values=tuple(float(v) for v in means),
        slope=slope,
        slope_stderr=slope_stderr,
        stderrs=tuple(float(v) for v in stderrs),
        metric=metric,
        seeds=seeds,
        bound=bound,
        gamma_b=gamma_b,
        gamma_b_flag=flag,
    )


def max_sampled_gradient_norm(game: GameModel, config: SolverConfig, probes: int,
                              seed: int = 0) -> float:
    """Empirical gradient bound: max dual norm of noisy estimates over sampled profiles."""
    from .solver import inject_noise
    from .spectral import dual_norm, hermitize

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        x = game.sample_profile(rng)
        for i in range(game.n_players):
            v = game.payoff_gradient(i, x)
            vhat = hermitize(
                inject_noise(v, config.noise, rng, blocks=game.players[i].domain.blocks)
            )
            worst = max(worst, dual_norm(vhat))
    return worst
