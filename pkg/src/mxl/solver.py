"""Dual-score learning loop: gradient tracking, exponential projection, noise, traces.

Each iteration adds a (possibly noisy) payoff gradient to a per-player score
matrix and maps scores back to the feasible set through the stable exponential
projection. A single run is inherently sequential; concurrency across runs is
achieved with independent RNG streams spawned from the master seed
(SeedSequence(seed).spawn -> [noise stream, scheduling stream]).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .games import GameModel, nash_residual
from .spectral import (
    dual_norm,
    hermitize,
    mirror_map,
    quantum_kl,
    random_hermitian,
)


class SolverError(RuntimeError):
    pass


class ConfigurationError(SolverError):
    pass


class NonFiniteGradientError(SolverError):
    def __init__(self, player: int, iteration: int):
        super().__init__(
            f"non-finite gradient for player {player + 1} at iteration {iteration}"
        )
        self.player = player
        self.iteration = iteration


@dataclass(frozen=True)
class StepSchedule:
    """Nonincreasing positive step sequence gamma_n, n = 1, 2, ...

    kinds: power_law gamma0/n^a with a in (0, 1]; optimized 2/(B n); constant.
    """

    kind: str
    gamma0: float = 1.0
    exponent: float = 1.0
    stability: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power_law", "optimized", "constant"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "power_law" and not (0.0 < self.exponent <= 1.0):
            raise ConfigurationError("power_law exponent must lie in (0, 1]")
        if self.kind in ("power_law", "constant") and not (self.gamma0 > 0):
            raise ConfigurationError("gamma0 must be positive")
        if self.kind == "optimized" and not (self.stability > 0):
            raise ConfigurationError("optimized schedule needs a positive stability constant")

    @classmethod
    def power_law(cls, gamma0: float = 1.0, exponent: float = 0.5) -> "StepSchedule":
        return cls("power_law", gamma0=gamma0, exponent=exponent)

    @classmethod
    def optimized(cls, stability: float) -> "StepSchedule":
        return cls("optimized", stability=stability)

    @classmethod
    def constant(cls, gamma0: float) -> "StepSchedule":
        return cls("constant", gamma0=gamma0)

    def at(self, n: int) -> float:
        if n < 1:
            raise ValueError("step index starts at 1")
        if self.kind == "power_law":
            return self.gamma0 / float(n) ** self.exponent
        if self.kind == "optimized":
            return 2.0 / (self.stability * n)
        return self.gamma0

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "power_law":
            out.update(gamma0=self.gamma0, exponent=self.exponent)
        elif self.kind == "optimized":
            out.update(stability=self.stability)
        else:
            out.update(gamma0=self.gamma0)
        return out


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean gradient perturbation.

    gaussian_hermitian(sigma) draws a Gaussian Hermitian matrix with
    E||Z||_F^2 = sigma^2 * dim (hence E||Z||_*^2 <= sigma^2 * dim).
    relative(level) recalibrates sigma each call so the Frobenius magnitude of
    the perturbation is `level` times that of the current true gradient.
    pareto_tail(tail_index, scale) multiplies a unit Hermitian direction by a
    heavy-tailed magnitude; for tail_index < 2 its variance is infinite, which
    deliberately breaks the subexponential-moment assumption (negative testing).
    With hermitian=False the raw complex (non-Hermitian) perturbation is
    emitted so the solver's hermitize correction is exercised.
    """

    kind: str = "none"
    sigma: float = 0.0
    level: float = 0.0
    tail_index: float = 1.5
    scale: float = 1.0
    hermitian: bool = True

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "relative", "pareto"):
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma < 0:
            raise ConfigurationError("sigma must be nonnegative")
        if self.kind == "relative" and self.level < 0:
            raise ConfigurationError("relative level must be nonnegative")
        if self.kind == "pareto" and not (self.tail_index > 1.0 and self.scale > 0):
            raise ConfigurationError("pareto tail needs tail_index > 1 and positive scale")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls("none")

    @classmethod
    def gaussian_hermitian(cls, sigma: float, hermitian: bool = True) -> "NoiseModel":
        return cls("gaussian", sigma=sigma, hermitian=hermitian)

    @classmethod
    def relative(cls, level: float, hermitian: bool = True) -> "NoiseModel":
        return cls("relative", level=level, hermitian=hermitian)

    @classmethod
    def pareto_tail(cls, tail_index: float, scale: float = 1.0) -> "NoiseModel":
        return cls("pareto", tail_index=tail_index, scale=scale)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "gaussian":
            out.update(sigma=self.sigma, hermitian=self.hermitian)
        elif self.kind == "relative":
            out.update(level=self.level, hermitian=self.hermitian)
        elif self.kind == "pareto":
            out.update(tail_index=self.tail_index, scale=self.scale)
        return out


def relative_sigma(v: np.ndarray, level: float) -> float:
    """Sigma giving a Gaussian Hermitian draw Frobenius magnitude level*||V||_F."""
    dim = v.shape[0]
    return level * float(np.linalg.norm(v)) / np.sqrt(dim)


def _raw_complex(dim: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    s = sigma / np.sqrt(2.0 * dim)
    return s * (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))


def _blockwise(dim: int, blocks, draw) -> np.ndarray:
    if blocks is None:
        return draw(dim)
    out = np.zeros((dim, dim), dtype=complex)
    pos = 0
    for b in blocks:
        out[pos : pos + b, pos : pos + b] = draw(b)
        pos += b
    return out


def inject_noise(v: np.ndarray, model: NoiseModel, rng: np.random.Generator,
                 blocks=None) -> np.ndarray:
    """Return the perturbed gradient estimate V + Z for the given noise model.

    `blocks` restricts the perturbation to the player's block-diagonal score
    space (feedback is per block), keeping the exponential projection feasible.
    """
    if model.kind == "none":
        return v
    dim = v.shape[0]
    if model.kind in ("gaussian", "relative"):
        sigma = model.sigma if model.kind == "gaussian" else relative_sigma(v, model.level)
        if model.hermitian:
            return v + _blockwise(dim, blocks, lambda b: random_hermitian(b, rng, scale=sigma))
        return v + _blockwise(dim, blocks, lambda b: _raw_complex(b, sigma, rng))
    # pareto: heavy-tailed magnitude on a unit-Frobenius Hermitian direction
    direction = _blockwise(dim, blocks, lambda b: random_hermitian(b, rng))
    direction /= max(float(np.linalg.norm(direction)), 1e-300)
    magnitude = model.scale * rng.pareto(model.tail_index)
    return v + magnitude * direction


@dataclass(frozen=True)
class AsyncSchedule:
    """Per-player update clocks and bounded feedback delays.

    mode "bernoulli": each player updates independently with probability p_i per
    epoch; "single": exactly one player per epoch, chosen with probability
    proportional to p_i. Delays are uniform over {0..delay_max}.
    """

    probabilities: tuple[float, ...]
    delay_max: int = 0
    mode: str = "bernoulli"

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "probabilities", probs)
        if any(not (0.0 < p <= 1.0) for p in probs):
            raise ConfigurationError("update probabilities must lie in (0, 1]")
        if self.delay_max < 0:
            raise ConfigurationError("delay_max must be >= 0")
        if self.mode not in ("bernoulli", "single"):
            raise ConfigurationError(f"unknown async mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "probabilities": list(self.probabilities),
            "delay_max": self.delay_max,
            "mode": self.mode,
        }


@dataclass
class SolverConfig:
    schedule: StepSchedule
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    max_iters: int = 1000
    stop_residual: float = 0.0
    seed: int = 0
    log_every: int = 100
    reference_point: tuple | None = None
    y0: tuple | None = None
    log_actions: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.stop_residual < 0:
            raise ConfigurationError("stop_residual must be >= 0")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be >= 1")

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "noise": self.noise.to_dict(),
            "max_iters": self.max_iters,
            "stop_residual": self.stop_residual,
            "seed": self.seed,
            "log_every": self.log_every,
            "tracks_reference": self.reference_point is not None,
            "log_actions": self.log_actions,
        }


@dataclass
class SolverState:
    """Scores, their projected actions, and the index of the next step (1-based)."""

    scores: list
    actions: list
    n: int = 1


@dataclass
class StepInfo:
    gamma: float
    noise_matrices: list


@dataclass
class TraceRecord:
    n: int
    step_size: float
    utilities: tuple
    nash_residual: float
    kl_to_reference: float | None
    noise_dual_norm: float
    actions: tuple | None = None


@dataclass
class RunTrace:
    records: list
    status: str
    iterations: int
    seed: int
    final_actions: tuple
    updates_per_player: tuple
    diagnostic: str | None = None
    config_echo: dict | None = None

    def terminal_residual(self) -> float:
        return self.records[-1].nash_residual if self.records else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("n,player,utility,nash_residual,kl_to_ref,step_size\n")
            for rec in self.records:
                kl = "" if rec.kl_to_reference is None else _fmt(rec.kl_to_reference)
                for pid, u in enumerate(rec.utilities, start=1):
                    fh.write(
                        f"{rec.n},{pid},{_fmt(u)},{_fmt(rec.nash_residual)},{kl},{_fmt(rec.step_size)}\n"
                    )

    def summary(self) -> dict:
        out = {
            "status": self.status,
            "iterations": self.iterations,
            "seed": self.seed,
            "terminal_residual": self.terminal_residual(),
            "logged_records": len(self.records),
            "updates_per_player": list(self.updates_per_player),
        }
        if self.diagnostic is not None:
            out["diagnostic"] = self.diagnostic
        if self.config_echo is not None:
            out["config"] = self.config_echo
        return out

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def initial_state(game: GameModel, y0=None) -> SolverState:
    if y0 is None:
        scores = [np.zeros((p.domain.dim, p.domain.dim), dtype=complex) for p in game.players]
    else:
        if len(y0) != game.n_players:
            raise ConfigurationError("y0 must provide one score matrix per player")
        scores = [hermitize(np.asarray(y, dtype=complex)) for y in y0]
    actions = [mirror_map(y, p.domain) for y, p in zip(scores, game.players)]
    return SolverState(scores=scores, actions=actions, n=1)


def mxl_step(
    game: GameModel,
    state: SolverState,
    schedule: StepSchedule,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> tuple[SolverState, StepInfo]:
    """One synchronous update of every player's score and action."""
    gamma = schedule.at(state.n)
    new_scores = []
    noise_mats = []
    for i, spec in enumerate(game.players):
        v = game.stochastic_gradient(i, state.actions, rng)
        if not np.all(np.isfinite(v)):
            raise NonFiniteGradientError(i, state.n)
        vhat = hermitize(inject_noise(v, noise, rng, blocks=spec.domain.blocks))
        noise_mats.append(vhat - v)
        new_scores.append(state.scores[i] + gamma * vhat)
    new_actions = [mirror_map(y, p.domain) for y, p in zip(new_scores, game.players)]
    return SolverState(new_scores, new_actions, state.n + 1), StepInfo(gamma, noise_mats)


def profile_kl(game: GameModel, reference, actions) -> float:
    """Sum of per-player divergences to a reference profile, bound-normalised."""
    total = 0.0
    for spec, ref, x in zip(game.players, reference, actions):
        a = spec.domain.trace_bound
        total += quantum_kl(np.asarray(ref) / a, np.asarray(x) / a)
    return total


def _log_record(game, config, state, info, n):
    residual = nash_residual(game, state.actions)
    for spec, x in zip(game.players, state.actions):
        spec.domain.require_member(x, name=f"logged action of player {spec.pid}")
    utilities = tuple(game.utility(i, state.actions) for i in range(game.n_players))
    kl = None
    if config.reference_point is not None:
        kl = profile_kl(game, config.reference_point, state.actions)
    noise_norm = max((dual_norm(z) for z in info.noise_matrices), default=0.0)
    actions = tuple(np.array(x) for x in state.actions) if config.log_actions else None
    return TraceRecord(n, info.gamma, utilities, residual, kl, noise_norm, actions)


def run(game: GameModel, config: SolverConfig) -> RunTrace:
    """Iterate the synchronous recursion until the residual target or max_iters.

    The stopping residual is evaluated on noiseless gradients at every logging
    checkpoint. Deterministic for a fixed config and seed.
    """
    noise_rng, _ = _spawn_streams(config.seed)
    state = initial_state(game, config.y0)
    records: list[TraceRecord] = []
    status = "max_iters"
    iterations = config.max_iters
    diagnostic = None
    try:
        for n in range(1, config.max_iters + 1):
            state, info = mxl_step(game, state, config.schedule, config.noise, noise_rng)
            if n % config.log_every == 0 or n == config.max_iters:
                rec = _log_record(game, config, state, info, n)
                records.append(rec)
                if rec.nash_residual <= config.stop_residual:
                    status = "converged"
                    iterations = n
                    break
    except NonFiniteGradientError as err:
        status = "diverged"
        iterations = state.n - 1
        diagnostic = str(err)
    updates = tuple([iterations] * game.n_players)
    return RunTrace(
        records,
        status,
        iterations,
        config.seed,
        tuple(np.array(x) for x in state.actions),
        updates,
        diagnostic=diagnostic,
    )


def run_async(game: GameModel, config: SolverConfig, async_schedule: AsyncSchedule) -> RunTrace:
    """Asynchronous variant: random update sets, per-player step counts, delayed feedback.

    Gradients are evaluated at a profile whose per-player components are
    delayed by independent uniform lags from {0..delay_max}; each updating
    player uses the step size indexed by their own update count. With
    delay_max = 0 and all probabilities 1 the trace is bit-identical to run().
    """
    if len(async_schedule.probabilities) != game.n_players:
        raise ConfigurationError("async schedule must list one probability per player")
    if async_schedule.delay_max >= config.max_iters:
        raise ConfigurationError("delay_max must be smaller than max_iters")
    probs = async_schedule.probabilities
    d_max = async_schedule.delay_max
    all_update = all(p == 1.0 for p in probs)

    noise_rng, sched_rng = _spawn_streams(config.seed)
    state = initial_state(game, config.y0)
    history = [tuple(state.actions)]  # history[k] is the profile k epochs ago
    counts = [0] * game.n_players
    records: list[TraceRecord] = []
    status = "max_iters"
    iterations = config.max_iters
    diagnostic = None
    try:
        for n in range(1, config.max_iters + 1):
            if async_schedule.mode == "single":
                weights = np.array(probs) / sum(probs)
                update_set = [int(sched_rng.choice(game.n_players, p=weights))]
            elif all_update:
                update_set = list(range(game.n_players))
            else:
                update_set = [i for i, p in enumerate(probs) if sched_rng.random() < p]
            gamma = float("nan")
            noise_mats = [np.zeros_like(s) for s in state.scores]
            for i in update_set:
                if d_max == 0:
                    delayed = history[0]
                else:
                    lags = sched_rng.integers(0, d_max + 1, size=game.n_players)
                    delayed = tuple(
                        history[min(int(lag), len(history) - 1)][j]
                        for j, lag in enumerate(lags)
                    )
                v = game.stochastic_gradient(i, delayed, noise_rng)
                if not np.all(np.isfinite(v)):
                    raise NonFiniteGradientError(i, n)
                vhat = hermitize(
                    inject_noise(v, config.noise, noise_rng, blocks=game.players[i].domain.blocks)
                )
                noise_mats[i] = vhat - v
                counts[i] += 1
                gamma = config.schedule.at(counts[i])
                state.scores[i] = state.scores[i] + gamma * vhat
            for i in update_set:
                state.actions[i] = mirror_map(state.scores[i], game.players[i].domain)
            state.n = n + 1
            history.insert(0, tuple(state.actions))
            del history[d_max + 1 :]
            if n % config.log_every == 0 or n == config.max_iters:
                info = StepInfo(gamma if update_set else float("nan"), noise_mats)
                rec = _log_record(game, config, state, info, n)
                records.append(rec)
                if rec.nash_residual <= config.stop_residual:
                    status = "converged"
                    iterations = n
                    break
    except NonFiniteGradientError as err:
        status = "diverged"
        iterations = state.n - 1
        diagnostic = str(err)
    return RunTrace(
        records,
        status,
        iterations,
        config.seed,
        tuple(np.array(x) for x in state.actions),
        tuple(counts),
        diagnostic=diagnostic,
    )


def _spawn_streams(seed: int):
    children = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(children[0]), np.random.default_rng(children[1])
