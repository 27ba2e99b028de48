"""Distributed gain synthesis from LMIs.

Four LMI families are built here, one per problem class:

* continuous robust stabilization in ``(P, tau)``;
* continuous robust H-infinity control in ``(Q, tau~, eps)``;
* discrete robust stabilization in ``(Q, W, tau)``;
* discrete robust H-infinity control in ``(Q, W, tau, eps)``.

Each builder returns an :class:`~robustmas.lmi.LmiProblem` so callers can
inspect or re-solve it.  The ``synth_*`` functions solve the problem and turn
the certificate into a :class:`Controller`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .lmi import (
    LmiProblem,
    ParameterSearch,
    VariableBlock,
    assemble,
    bmat,
    maximize_parameter,
    solve_feasibility,
)
from .matrixcore import as_matrix, is_positive_definite, solve_linear
from .netgraph import Network, PinSet

log = logging.getLogger(__name__)

__all__ = [
    "AgentModel",
    "Certificate",
    "Controller",
    "SynthesisError",
    "AssumptionError",
    "coupling_threshold",
    "problem_scale",
    "lmi_ct",
    "lmi_ct_hinf",
    "lmi_dt",
    "lmi_dt_hinf",
    "synth_ct",
    "synth_ct_hinf",
    "synth_dt",
    "synth_dt_hinf",
    "max_delta",
]

MODES = ("continuous", "discrete")
# P > 0 is imposed as -P + POSDEF_FLOOR * s * I <= 0.
POSDEF_FLOOR = 1e-6


class SynthesisError(RuntimeError):
    """The synthesis LMI was not certified feasible.

    This never claims that no controller exists: the LMIs are only
    sufficient conditions.
    """

    def __init__(self, message: str, *, delta: float, kappa: float | None = None, result=None):
        super().__init__(message)
        self.delta = delta
        self.kappa = kappa
        self.result = result


class AssumptionError(ValueError):
    """The network is disconnected or has no pinned node."""


@dataclass(frozen=True)
class AgentModel:
    """Per-agent nominal plant with norm-bounded uncertainty ``D F E``, ``||F|| <= delta``.

    Parameters
    ----------
    A, B, D, E : array_like
        Shapes ``n x n``, ``n x m``, ``n x j`` and ``k x n``.
    delta : float
        Uncertainty bound.  Zero is accepted and means the nominal plant.
    B2, C : array_like, optional
        Disturbance input (``n x p``) and performance output (``l x n``).
    gamma : float, optional
        Attenuation level; must be given together with ``B2`` and ``C``.
    mode : {"continuous", "discrete"}
    """

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    E: np.ndarray
    delta: float
    B2: np.ndarray | None = None
    C: np.ndarray | None = None
    gamma: float | None = None
    mode: str = "continuous"

    def __post_init__(self):
        a = as_matrix(self.A, "A")
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"A must be square, got {a.shape}")
        b = as_matrix(self.B, "B")
        d = as_matrix(self.D, "D")
        e = as_matrix(self.E, "E")
        for name, mat in (("B", b), ("D", d)):
            if mat.shape[0] != n:
                raise ValueError(f"{name} must have {n} rows (n x ...), got {mat.shape}")
        if e.shape[1] != n:
            raise ValueError(f"E must have {n} columns (k x {n}), got {e.shape}")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be finite and nonnegative, got {self.delta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        present = [x is not None for x in (self.B2, self.C, self.gamma)]
        if any(present) and not all(present):
            raise ValueError("B2, C and gamma must be given together")
        if all(present):
            b2 = as_matrix(self.B2, "B2")
            c = as_matrix(self.C, "C")
            if b2.shape[0] != n:
                raise ValueError(f"B2 must have {n} rows, got {b2.shape}")
            if c.shape[1] != n:
                raise ValueError(f"C must have {n} columns, got {c.shape}")
            if not (np.isfinite(self.gamma) and self.gamma > 0):
                raise ValueError(f"gamma must be positive, got {self.gamma}")
            object.__setattr__(self, "B2", b2)
            object.__setattr__(self, "C", c)
            object.__setattr__(self, "gamma", float(self.gamma))
        for name, mat in (("A", a), ("B", b), ("D", d), ("E", e)):
            object.__setattr__(self, name, mat)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def has_disturbance(self) -> bool:
        return self.B2 is not None

    def with_delta(self, delta: float) -> "AgentModel":
        return replace(self, delta=float(delta))


@dataclass(frozen=True)
class Certificate:
    """LMI solution backing a controller.

    ``matrix`` is ``P`` (continuous stabilization) or ``Q`` (all other
    problems); ``W`` is present for discrete problems.
    """

    matrix: np.ndarray
    tau: float
    eps: float | None = None
    W: np.ndarray | None = None
    name: str = "P"
    margin: float = float("nan")


@dataclass(frozen=True)
class Controller:
    """Distributed gain with its coupling strength and certificate."""

    K: np.ndarray
    mode: str
    pins: PinSet
    coupling_c: float | None = None
    certificate: Certificate | None = None
    kappa: float | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "K", as_matrix(self.K, "K"))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "continuous" and not (self.coupling_c is not None and self.coupling_c > 0):
            raise ValueError("continuous controllers need a positive coupling strength")

    def with_coupling(self, c: float) -> "Controller":
        return replace(self, coupling_c=float(c))


def coupling_threshold(tau: float, lambda_min: float) -> float:
    """Smallest admissible coupling strength ``tau / lambda_min``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not lambda_min > 0:
        raise ValueError(f"lambda_min must be positive, got {lambda_min}")
    return tau / lambda_min


def _norm2(m) -> float:
    return float(np.linalg.norm(m, 2))


def problem_scale(model: AgentModel, delta: float | None = None) -> float:
    """Largest spectral norm among the data entering the LMIs (``delta D`` counted together)."""
    delta = model.delta if delta is None else delta
    norms = [_norm2(model.A), _norm2(model.B), delta * _norm2(model.D), _norm2(model.E)]
    if model.has_disturbance:
        norms += [_norm2(model.B2) / model.gamma, _norm2(model.C)]
    return max(max(norms), 1e-12)


def _posdef(name: str, n: int, s: float):
    return (f"{name}>0", lambda v: -v[name] + POSDEF_FLOOR * s * np.eye(n))


def lmi_ct(model: AgentModel, delta: float | None = None) -> LmiProblem:
    """Continuous stabilization LMI in ``(P, tau)``.

    ``[[AP + PA' - tau BB', delta D, PE'], [delta D', -I, 0], [EP, 0, -I]] < 0``.
    """
    delta = model.delta if delta is None else float(delta)
    a, b, d, e = model.A, model.B, model.D, model.E
    n, j, k = model.n, d.shape[1], e.shape[0]
    s = problem_scale(model, delta)
    bbt = b @ b.T

    def main(v):
        p, tau = v["P"], v["tau"]
        top = a @ p + p @ a.T - tau * bbt
        return bmat([
            [top, delta * d, p @ e.T],
            [delta * d.T, -np.eye(j), None],
            [e @ p, None, -np.eye(k)],
        ])

    variables = [VariableBlock.symmetric("P", n), VariableBlock.scalar("tau", 0.0)]
    return assemble(variables, [("main", main), _posdef("P", n, s)], scale=s)


def lmi_ct_hinf(model: AgentModel, delta: float | None = None) -> LmiProblem:
    """Continuous H-infinity LMI in ``(Q, tau~, eps)``.

    ``[[AQ + QA' - tau~ BB' + B2 B2'/gamma^2 + eps delta^2 DD', QC', QE'],
    [CQ, -I, 0], [EQ, 0, -eps I]] < 0``.
    """
    if not model.has_disturbance:
        raise ValueError("H-infinity synthesis needs B2, C and gamma")
    delta = model.delta if delta is None else float(delta)
    a, b, d, e, b2, c = model.A, model.B, model.D, model.E, model.B2, model.C
    n, k, l = model.n, e.shape[0], c.shape[0]
    s = problem_scale(model, delta)
    bbt = b @ b.T
    ddt = delta**2 * (d @ d.T)
    dist = (b2 @ b2.T) / model.gamma**2

    def main(v):
        q, tau, eps = v["Q"], v["tau"], v["eps"]
        top = a @ q + q @ a.T - tau * bbt + eps * ddt + dist
        return bmat([
            [top, q @ c.T, q @ e.T],
            [c @ q, -np.eye(l), None],
            [e @ q, None, -1.0 * eps * np.eye(k)],
        ])

    variables = [
        VariableBlock.symmetric("Q", n),
        VariableBlock.scalar("tau", 0.0),
        VariableBlock.scalar("eps", 0.0),
    ]
    return assemble(variables, [("main", main), _posdef("Q", n, s)], scale=s)


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not 0 < kappa < 1:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    return kappa


def lmi_dt(model: AgentModel, kappa: float, delta: float | None = None) -> LmiProblem:
    """Discrete stabilization LMI in ``(Q, W, tau)`` with eigenvalue radius ``kappa``.

    ``[[-Q, (AQ+BW)', QE', W'], [AQ+BW, -Q + delta^2 DD' + tau kappa^2 BB', 0, 0],
    [EQ, 0, -I, 0], [W, 0, 0, -tau I]] < 0``.
    """
    kappa = _check_kappa(kappa)
    delta = model.delta if delta is None else float(delta)
    a, b, d, e = model.A, model.B, model.D, model.E
    n, m, k = model.n, model.m, e.shape[0]
    s = problem_scale(model, delta)
    bbt = kappa**2 * (b @ b.T)
    ddt = delta**2 * (d @ d.T)

    def main(v):
        q, w, tau = v["Q"], v["W"], v["tau"]
        aq = a @ q + b @ w
        return bmat([
            [-q, aq.T, q @ e.T, w.T],
            [aq, -q + ddt + tau * bbt, None, None],
            [e @ q, None, -np.eye(k), None],
            [w, None, None, -1.0 * tau * np.eye(m)],
        ])

    variables = [
        VariableBlock.symmetric("Q", n),
        VariableBlock.matrix("W", m, n),
        VariableBlock.scalar("tau", 0.0),
    ]
    return assemble(variables, [("main", main), _posdef("Q", n, s)], scale=s)


def lmi_dt_hinf(model: AgentModel, kappa: float, delta: float | None = None) -> LmiProblem:
    """Discrete H-infinity LMI in ``(Q, W, tau, eps)``.

    It is the discrete bounded-real condition for the scaled system with
    input ``[sqrt(eps) delta D, B2/gamma]`` and output ``[E/sqrt(eps); C]``,
    robustified over the eigenvalue radius ``kappa``::

        [[-Q, (AQ+BW)', QE', QC', W'],
         [AQ+BW, -Q + eps delta^2 DD' + B2 B2'/gamma^2 + tau kappa^2 BB', 0, 0, 0],
         [EQ, 0, -eps I, 0, 0],
         [CQ, 0, 0, -I, 0],
         [W, 0, 0, 0, -tau I]] < 0
    """
    if not model.has_disturbance:
        raise ValueError("H-infinity synthesis needs B2, C and gamma")
    kappa = _check_kappa(kappa)
    delta = model.delta if delta is None else float(delta)
    a, b, d, e, b2, c = model.A, model.B, model.D, model.E, model.B2, model.C
    n, m, k, l = model.n, model.m, e.shape[0], c.shape[0]
    s = problem_scale(model, delta)
    bbt = kappa**2 * (b @ b.T)
    ddt = delta**2 * (d @ d.T)
    dist = (b2 @ b2.T) / model.gamma**2

    def main(v):
        q, w, tau, eps = v["Q"], v["W"], v["tau"], v["eps"]
        aq = a @ q + b @ w
        return bmat([
            [-q, aq.T, q @ e.T, q @ c.T, w.T],
            [aq, -q + eps * ddt + dist + tau * bbt, None, None, None],
            [e @ q, None, -1.0 * eps * np.eye(k), None, None],
            [c @ q, None, None, -np.eye(l), None],
            [w, None, None, None, -1.0 * tau * np.eye(m)],
        ])

    variables = [
        VariableBlock.symmetric("Q", n),
        VariableBlock.matrix("W", m, n),
        VariableBlock.scalar("tau", 0.0),
        VariableBlock.scalar("eps", 0.0),
    ]
    return assemble(variables, [("main", main), _posdef("Q", n, s)], scale=s)


def _require_network(model: AgentModel, network: Network, mode: str) -> None:
    if model.mode != mode:
        raise ValueError(f"expected a {mode} model, got {model.mode}")
    if not network.satisfies_assumption1():
        raise AssumptionError("graph must be connected with at least one positive pin weight")


def _solve(problem: LmiProblem, model: AgentModel, kappa: float | None, what: str, **solver_opts):
    result = solve_feasibility(problem, **solver_opts)
    log.info("%s: status=%s margin=%.3e t*=%.3e", what, result.status, result.margin, result.phase1_value)
    if not result.feasible:
        raise SynthesisError(
            f"{what} LMI not certified feasible ({result.status}) at delta={model.delta:g}"
            + (f", kappa={kappa:g}" if kappa is not None else ""),
            delta=model.delta,
            kappa=kappa,
            result=result,
        )
    return result


def _gain_from_inverse(mat: np.ndarray, right: np.ndarray) -> np.ndarray:
    """``right @ mat^{-1}`` via a linear solve with ``mat^T``."""
    return solve_linear(mat.T, right.T).T


def synth_ct(model: AgentModel, network: Network, **solver_opts) -> Controller:
    """Robust stabilizing gain ``K = -B' P^{-1} / 2`` with coupling ``tau / lambda_min``."""
    _require_network(model, network, "continuous")
    result = _solve(lmi_ct(model), model, None, "continuous stabilization", **solver_opts)
    p, tau = result.point["P"], float(result.point["tau"])
    k = -0.5 * _gain_from_inverse(p, model.B.T)
    lam = network.lambda_min()
    cert = Certificate(p, tau, name="P", margin=result.margin)
    return Controller(k, "continuous", network.pins, coupling_threshold(tau, lam), cert,
                      info={"lambda_min": lam, "delta": model.delta})


def synth_ct_hinf(model: AgentModel, network: Network, **solver_opts) -> Controller:
    """Robust H-infinity gain ``K = -B' Q^{-1} / 2`` with coupling ``tau~ / lambda_min``."""
    _require_network(model, network, "continuous")
    result = _solve(lmi_ct_hinf(model), model, None, "continuous H-infinity", **solver_opts)
    q, tau, eps = result.point["Q"], float(result.point["tau"]), float(result.point["eps"])
    k = -0.5 * _gain_from_inverse(q, model.B.T)
    lam = network.lambda_min()
    cert = Certificate(q, tau, eps=eps, name="Q", margin=result.margin)
    return Controller(k, "continuous", network.pins, coupling_threshold(tau, lam), cert,
                      info={"lambda_min": lam, "delta": model.delta, "gamma": model.gamma})


def _resolve_kappa(network: Network, kappa: float | None) -> float:
    rho = network.kappa()
    if kappa is None:
        return _check_kappa(rho)
    kappa = _check_kappa(kappa)
    if kappa < rho - 1e-12:
        raise ValueError(f"kappa={kappa:g} is below the network eigenvalue radius {rho:.6g}")
    return kappa


def synth_dt(model: AgentModel, network: Network, kappa: float | None = None, **solver_opts) -> Controller:
    """Robust discrete gain ``K = W Q^{-1}``.

    ``kappa`` defaults to the spectral radius of the pinned stochastic
    matrix and may only be raised above it.
    """
    _require_network(model, network, "discrete")
    kappa = _resolve_kappa(network, kappa)
    result = _solve(lmi_dt(model, kappa), model, kappa, "discrete stabilization", **solver_opts)
    q, w, tau = result.point["Q"], result.point["W"], float(result.point["tau"])
    cert = Certificate(q, tau, W=w, name="Q", margin=result.margin)
    return Controller(_gain_from_inverse(q, w), "discrete", network.pins, None, cert, kappa,
                      info={"delta": model.delta})


def synth_dt_hinf(model: AgentModel, network: Network, kappa: float | None = None, **solver_opts) -> Controller:
    """Robust discrete H-infinity gain ``K = W Q^{-1}``."""
    _require_network(model, network, "discrete")
    kappa = _resolve_kappa(network, kappa)
    result = _solve(lmi_dt_hinf(model, kappa), model, kappa, "discrete H-infinity", **solver_opts)
    q, w = result.point["Q"], result.point["W"]
    tau, eps = float(result.point["tau"]), float(result.point["eps"])
    cert = Certificate(q, tau, eps=eps, W=w, name="Q", margin=result.margin)
    return Controller(_gain_from_inverse(q, w), "discrete", network.pins, None, cert, kappa,
                      info={"delta": model.delta, "gamma": model.gamma})


def max_delta(
    model: AgentModel,
    network: Network | None = None,
    kappa: float | None = None,
    *,
    tol: float = 1e-3,
    cap: float = 1e6,
    hi_init: float = 1.0,
) -> ParameterSearch:
    """Largest uncertainty bound for which the stabilization LMI stays feasible.

    Continuous models search the ``(P, tau)`` family, which does not depend
    on the graph.  Discrete models need ``kappa`` or a network to derive it.
    """
    if model.mode == "continuous":
        family = lambda delta: lmi_ct(model, delta)  # noqa: E731
    else:
        if kappa is None:
            if network is None:
                raise ValueError("discrete max_delta needs kappa or a network")
            kappa = network.kappa()
        kappa = _check_kappa(kappa)
        family = lambda delta: lmi_dt(model, kappa, delta)  # noqa: E731
    base = max(_norm2(model.A), _norm2(model.B), _norm2(model.E), 1e-12)
    lo = 1e-3 * base
    return maximize_parameter(family, lo, max(hi_init, 2 * lo), tol, cap=cap)


def certificate_is_valid(cert: Certificate) -> bool:
    return is_positive_definite(cert.matrix) and cert.tau > 0
