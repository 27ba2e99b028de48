"""Closed-loop network simulation under sampled norm-bounded uncertainty.

Continuous networks are integrated with classical fixed-step RK4.  With
piecewise-constant uncertainty the right-hand side is linear and
time-invariant on each segment, so one RK4 step is the matrix
``I + hM + (hM)^2/2 + (hM)^3/6 + (hM)^4/24`` and is formed once per segment.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .matrixcore import as_matrix, kron

log = logging.getLogger(__name__)

__all__ = [
    "UncertaintySchedule",
    "Trajectory",
    "SimulationDiverged",
    "sample_uncertainty",
    "network_matrix",
    "default_step",
    "simulate_ct",
    "simulate_dt",
    "simulate_disturbed",
    "empirical_l2_gain",
    "bandlimited_signal",
]

DIVERGENCE_FACTOR = 1e12
MAX_STORED_ROWS = 20000


class SimulationDiverged(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


def _random_block(rng: np.random.Generator, delta: float, dims: tuple[int, int]) -> np.ndarray:
    g = rng.uniform(-1.0, 1.0, size=dims)
    sigma = float(np.linalg.norm(g, 2))
    target = rng.uniform(0.0, delta)
    if sigma == 0.0 or delta == 0.0:
        return np.zeros(dims)
    return g * (target / sigma)


@dataclass(frozen=True)
class UncertaintySchedule:
    """Piecewise-constant per-agent uncertainty blocks ``F_i``.

    Interval ``k`` (``[k*period, (k+1)*period)``) draws its blocks from a
    generator seeded by ``(seed, k)``, so any interval can be regenerated
    independently.  ``fixed`` overrides sampling with constant blocks.
    """

    delta: float
    agent_count: int
    dims: tuple[int, int]
    seed: int = 0
    period: float = math.inf
    fixed: tuple[np.ndarray, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def constant(cls, blocks, delta: float | None = None) -> "UncertaintySchedule":
        mats = tuple(as_matrix(b, "F") for b in blocks)
        if not mats:
            raise ValueError("need at least one block")
        bound = max(float(np.linalg.norm(b, 2)) for b in mats)
        delta = bound if delta is None else float(delta)
        if bound > delta * (1 + 1e-12):
            raise ValueError(f"block norm {bound:g} exceeds the bound {delta:g}")
        return cls(delta, len(mats), mats[0].shape, fixed=mats)

    @classmethod
    def zero(cls, agent_count: int, dims: tuple[int, int]) -> "UncertaintySchedule":
        return cls(0.0, agent_count, dims)

    def index_at(self, t: float) -> int:
        if self.fixed is not None or math.isinf(self.period):
            return 0
        return int(math.floor(t / self.period + 1e-12))

    def blocks(self, index: int) -> np.ndarray:
        """Array of shape ``(agent_count, j, k)`` for interval ``index``."""
        if self.fixed is not None:
            return np.stack(self.fixed)
        if index not in self._cache:
            rng = np.random.default_rng([self.seed, index])
            self._cache[index] = np.stack(
                [_random_block(rng, self.delta, self.dims) for _ in range(self.agent_count)]
            )
        return self._cache[index]

    def at(self, t: float) -> np.ndarray:
        return self.blocks(self.index_at(t))

    def switch_times(self, horizon: float) -> list[float]:
        """Switch instants strictly inside ``(0, horizon)``."""
        if self.fixed is not None or math.isinf(self.period):
            return []
        count = int(math.ceil(horizon / self.period))
        return [k * self.period for k in range(1, count) if k * self.period < horizon]


def sample_uncertainty(delta: float, dims: tuple[int, int], agent_count: int, seed: int = 0,
                       switch_period: float = math.inf) -> UncertaintySchedule:
    """Random schedule whose blocks have largest singular value uniform in ``[0, delta]``."""
    if not delta >= 0:
        raise ValueError("delta must be nonnegative")
    if not switch_period > 0:
        raise ValueError("switch_period must be positive")
    return UncertaintySchedule(float(delta), int(agent_count), tuple(dims), int(seed), float(switch_period))


@dataclass
class Trajectory:
    """Sampled network trajectory; each row of ``states`` is the stacked state."""

    times: np.ndarray
    states: np.ndarray
    n_agents: int
    outputs: np.ndarray | None = None
    inputs_w: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        rows = self.times.shape[0]
        for name in ("states", "outputs", "inputs_w"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != rows:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {rows}")
        if self.states.shape[1] % self.n_agents:
            raise ValueError("state width is not a multiple of the agent count")

    @property
    def state_dim(self) -> int:
        return self.states.shape[1] // self.n_agents

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def decay_ratio(self) -> float:
        start = np.linalg.norm(self.states[0])
        return float(np.linalg.norm(self.states[-1]) / start) if start > 0 else 0.0

    def header(self) -> list[str]:
        cols = ["t"]
        cols += [f"x{i + 1}_{s + 1}" for i in range(self.n_agents) for s in range(self.state_dim)]
        for prefix, arr in (("z", self.outputs), ("w", self.inputs_w)):
            if arr is not None:
                per = arr.shape[1] // self.n_agents
                cols += [f"{prefix}{i + 1}_{s + 1}" for i in range(self.n_agents) for s in range(per)]
        return cols

    def write_csv(self, path) -> None:
        blocks = [self.times[:, None], self.states]
        blocks += [a for a in (self.outputs, self.inputs_w) if a is not None]
        data = np.hstack(blocks)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row in data:
                writer.writerow([f"{v:.9g}" for v in row])


def _stack_x0(x0, dim: int) -> np.ndarray:
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != dim:
        raise ValueError(f"x0 must have {dim} entries, got {x.size}")
    return x


def _delta_matrix(model, blocks: np.ndarray) -> np.ndarray:
    n_agents = blocks.shape[0]
    big_d = kron(np.eye(n_agents), model.D)
    big_e = kron(np.eye(n_agents), model.E)
    delta = np.zeros((big_d.shape[1], big_e.shape[0]))
    j, k = model.D.shape[1], model.E.shape[0]
    for i, f in enumerate(blocks):
        delta[i * j:(i + 1) * j, i * k:(i + 1) * k] = f
    return big_d @ delta @ big_e


def network_matrix(model, network, controller, blocks: np.ndarray | None = None) -> np.ndarray:
    """Stacked closed-loop state matrix for the given uncertainty blocks."""
    n_agents = network.n
    bk = model.B @ controller.K
    base = kron(np.eye(n_agents), model.A)
    if model.mode == "continuous":
        base = base + controller.coupling_c * kron(network.pinned_laplacian(), bk)
    else:
        base = base + kron(np.eye(n_agents) - network.pinned_stochastic(), bk)
    if blocks is not None:
        base = base + _delta_matrix(model, blocks)
    return base


def default_step(model, network, controller) -> float:
    """``0.1 / ||A_cl||`` using the nominal 2-norm plus the uncertainty bound ``delta ||D|| ||E||``."""
    nominal = float(np.linalg.norm(network_matrix(model, network, controller), 2))
    bound = nominal + model.delta * np.linalg.norm(model.D, 2) * np.linalg.norm(model.E, 2)
    return 0.1 / max(bound, 1e-12)


def _rk4_matrix(m: np.ndarray, h: float) -> np.ndarray:
    hm = h * m
    eye = np.eye(m.shape[0])
    return eye + hm @ (eye + hm @ (eye / 2 + hm @ (eye / 6 + hm / 24)))


def _rk4_affine(m: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """One RK4 step of ``x' = Mx + Bw`` as a matrix acting on ``[x; w(t); w(t+h/2); w(t+h)]``."""
    dim, width = m.shape[0], b.shape[1]
    step = np.zeros((dim, dim + 3 * width))
    for col in range(step.shape[1]):
        e = np.zeros(step.shape[1])
        e[col] = 1.0
        x, w0, wm, w1 = np.split(e, [dim, dim + width, dim + 2 * width])
        k1 = m @ x + b @ w0
        k2 = m @ (x + h / 2 * k1) + b @ wm
        k3 = m @ (x + h / 2 * k2) + b @ wm
        k4 = m @ (x + h * k3) + b @ w1
        step[:, col] = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return step


def _check_divergence(x, ref: float, t: float) -> None:
    if ref > 0 and not np.linalg.norm(x) <= DIVERGENCE_FACTOR * ref:
        raise SimulationDiverged(f"state norm exceeded {DIVERGENCE_FACTOR:g} x initial norm at t={t:g}", t)


def _segments(schedule: UncertaintySchedule, horizon: float) -> list[tuple[float, float]]:
    cuts = [0.0] + schedule.switch_times(horizon) + [horizon]
    return list(zip(cuts[:-1], cuts[1:]))


def simulate_ct(model, network, controller, schedule: UncertaintySchedule, x0, T: float,
                h: float | None = None, max_rows: int = MAX_STORED_ROWS) -> Trajectory:
    """RK4 integration of the continuous network closed loop.

    Each constant-uncertainty segment is split into equal steps no larger
    than ``h`` so every switch lands on a step boundary.  At most about
    ``max_rows`` samples are stored; the propagation between stored
    samples uses powers of the one-step matrix.
    """
    if model.mode != "continuous":
        raise ValueError("simulate_ct needs a continuous model")
    h = default_step(model, network, controller) if h is None else float(h)
    if not h > 0 or not T >= h:
        raise ValueError("need h > 0 and T >= h")
    x = _stack_x0(x0, network.n * model.n)
    ref = float(np.linalg.norm(x))
    total_steps = sum(max(1, math.ceil((b - a) / h - 1e-9)) for a, b in _segments(schedule, T))
    stride = max(1, math.ceil(total_steps / max_rows))
    times, states = [0.0], [x.copy()]
    for a, b in _segments(schedule, T):
        steps = max(1, math.ceil((b - a) / h - 1e-9))
        hs = (b - a) / steps
        phi = _rk4_matrix(network_matrix(model, network, controller, schedule.at(a)), hs)
        phi_stride = np.linalg.matrix_power(phi, stride)
        done = 0
        while done < steps:
            chunk = min(stride, steps - done)
            x = (phi_stride if chunk == stride else np.linalg.matrix_power(phi, chunk)) @ x
            done += chunk
            t = a + done * hs
            _check_divergence(x, ref, t)
            times.append(t)
            states.append(x.copy())
    return Trajectory(np.array(times), np.array(states), network.n)


def simulate_dt(model, network, controller, schedule: UncertaintySchedule, x0, steps: int) -> Trajectory:
    """Iterate ``x(k+1) = M(k) x(k)``; schedule periods are counted in steps."""
    if model.mode != "discrete":
        raise ValueError("simulate_dt needs a discrete model")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x = _stack_x0(x0, network.n * model.n)
    ref = float(np.linalg.norm(x))
    states = [x.copy()]
    current, mat = None, None
    for k in range(steps):
        idx = schedule.index_at(k)
        if idx != current:
            current, mat = idx, network_matrix(model, network, controller, schedule.blocks(idx))
        x = mat @ x
        _check_divergence(x, ref, k + 1)
        states.append(x.copy())
    return Trajectory(np.arange(steps + 1, dtype=float), np.array(states), network.n)


def _w_at(w_signal, t: float, width: int) -> np.ndarray:
    w = np.asarray(w_signal(t), dtype=float).ravel()
    if w.size != width:
        raise ValueError(f"disturbance signal must have {width} entries, got {w.size}")
    return w


def simulate_disturbed(model, network, controller, schedule: UncertaintySchedule,
                       w_signal: Callable[[float], np.ndarray], x0=None, T: float | None = None,
                       steps: int | None = None, h: float | None = None) -> Trajectory:
    """Closed loop with additive ``(I (x) B2) w`` and recorded output ``z = (I (x) C) x``.

    Every step is stored so that :func:`empirical_l2_gain` sees the full signal.
    """
    if not model.has_disturbance:
        raise ValueError("model has no disturbance channel (B2, C)")
    n_agents = network.n
    big_b2 = kron(np.eye(n_agents), model.B2)
    big_c = kron(np.eye(n_agents), model.C)
    width = big_b2.shape[1]
    x = np.zeros(n_agents * model.n) if x0 is None else _stack_x0(x0, n_agents * model.n)
    ref = max(float(np.linalg.norm(x)), 1.0)
    times, states, ws = [0.0], [x.copy()], [_w_at(w_signal, 0.0, width)]

    if model.mode == "discrete":
        if steps is None or steps < 1:
            raise ValueError("discrete simulation needs steps >= 1")
        current, mat = None, None
        for k in range(steps):
            idx = schedule.index_at(k)
            if idx != current:
                current, mat = idx, network_matrix(model, network, controller, schedule.blocks(idx))
            x = mat @ x + big_b2 @ ws[-1]
            _check_divergence(x, ref, k + 1)
            times.append(float(k + 1))
            states.append(x.copy())
            ws.append(_w_at(w_signal, float(k + 1), width))
    else:
        if T is None:
            raise ValueError("continuous simulation needs T")
        h = default_step(model, network, controller) if h is None else float(h)
        if not h > 0 or not T >= h:
            raise ValueError("need h > 0 and T >= h")
        for a, b in _segments(schedule, T):
            n_steps = max(1, math.ceil((b - a) / h - 1e-9))
            hs = (b - a) / n_steps
            step = _rk4_affine(network_matrix(model, network, controller, schedule.at(a)), big_b2, hs)
            t = a
            for _ in range(n_steps):
                wm = _w_at(w_signal, t + hs / 2, width)
                w1 = _w_at(w_signal, t + hs, width)
                x = step @ np.concatenate([x, ws[-1], wm, w1])
                t += hs
                _check_divergence(x, ref, t)
                times.append(t)
                states.append(x.copy())
                ws.append(w1)
    states_arr = np.array(states)
    return Trajectory(np.array(times), states_arr, n_agents, states_arr @ big_c.T, np.array(ws))


def empirical_l2_gain(trajectory: Trajectory) -> float:
    """Ratio of output to input energy, each accumulated with the trapezoid rule.

    On a finite horizon this can only underestimate the true L2 gain.
    """
    if trajectory.outputs is None or trajectory.inputs_w is None:
        raise ValueError("trajectory has no recorded outputs and disturbances")
    t = trajectory.times
    z_energy = np.trapezoid(np.sum(trajectory.outputs**2, axis=1), t)
    w_energy = np.trapezoid(np.sum(trajectory.inputs_w**2, axis=1), t)
    if not w_energy > 0:
        raise ValueError("disturbance has zero energy")
    return float(np.sqrt(z_energy / w_energy))


def bandlimited_signal(seed: int, width: int, duration: float, omega_max: float = 5.0,
                       tones: int = 5) -> Callable[[float], np.ndarray]:
    """Random sum of sinusoids below ``omega_max`` per channel, switched off after ``duration``."""
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=(tones, width))
    freqs = rng.uniform(0.0, omega_max, size=(tones, width))
    phases = rng.uniform(0.0, 2 * np.pi, size=(tones, width))

    def signal(t: float) -> np.ndarray:
        if t > duration:
            return np.zeros(width)
        return np.sum(amps * np.sin(freqs * t + phases), axis=0)

    return signal
