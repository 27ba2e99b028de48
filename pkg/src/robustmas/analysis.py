"""Stability tests, H-infinity norms and the decoupled network certificates.

The network checks reduce the N-agent closed loop to one small system per
eigenvalue of the pinned Laplacian (continuous time) or of the pinned
stochastic matrix (discrete time) and test each one separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrixcore import as_matrix, eig_general, eig_symmetric, solve_linear, spectral_radius
from .netgraph import Network

__all__ = [
    "TransferTriple",
    "ModeCheck",
    "VerificationReport",
    "UnstableSystemError",
    "ResidualUndefinedError",
    "is_hurwitz",
    "is_schur",
    "hinf_norm_ct",
    "hinf_norm_dt",
    "closed_loop_matrix",
    "network_eigenvalues",
    "verify_stabilization",
    "verify_attenuation",
    "brl_residual",
]

HURWITZ_RTOL = 1e-9
SCHUR_TOL = 1e-9
IMAG_AXIS_RTOL = 1e-8
MAX_BISECTIONS = 200


class UnstableSystemError(ValueError):
    """The state matrix is not Hurwitz/Schur, so the H-infinity norm is infinite."""


class ResidualUndefinedError(ArithmeticError):
    """``I - delta^2 D^T P D`` is not positive definite in the discrete residual."""


@dataclass(frozen=True)
class TransferTriple:
    """State-space triple ``C_out (sI - A_cl)^{-1} B_in`` without feedthrough."""

    A_cl: np.ndarray
    B_in: np.ndarray
    C_out: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.A_cl, "A_cl")
        b = as_matrix(self.B_in, "B_in")
        c = as_matrix(self.C_out, "C_out")
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"A_cl must be square, got {a.shape}")
        if b.shape[0] != n:
            raise ValueError(f"B_in must have {n} rows, got {b.shape}")
        if c.shape[1] != n:
            raise ValueError(f"C_out must have {n} columns, got {c.shape}")
        object.__setattr__(self, "A_cl", a)
        object.__setattr__(self, "B_in", b)
        object.__setattr__(self, "C_out", c)


def is_hurwitz(m) -> bool:
    m = as_matrix(m, "m")
    scale = max(float(np.linalg.norm(m)), 1.0)
    return bool(eig_general(m).real.max() < -HURWITZ_RTOL * scale)


def is_schur(m) -> bool:
    return spectral_radius(m) < 1.0 - SCHUR_TOL


def _sigma_max_ct(a, b, c, d, omega: float) -> float:
    n = a.shape[0]
    g = c @ np.linalg.solve(1j * omega * np.eye(n) - a, b) + d
    return float(np.linalg.norm(g, 2))


def _hamiltonian(a, b, c, d, gamma: float) -> np.ndarray:
    r = gamma * gamma * np.eye(d.shape[1]) - d.T @ d
    r_inv = np.linalg.inv(r)
    a_h = a + b @ r_inv @ d.T @ c
    top = np.hstack([a_h, b @ r_inv @ b.T])
    bottom = np.hstack([-c.T @ (np.eye(d.shape[0]) + d @ r_inv @ d.T) @ c, -a_h.T])
    return np.vstack([top, bottom])


def _imaginary_frequencies(h: np.ndarray) -> np.ndarray:
    eigs = np.linalg.eigvals(h)
    thresh = IMAG_AXIS_RTOL * max(float(np.linalg.norm(h)), 1.0)
    on_axis = eigs[np.abs(eigs.real) <= thresh]
    return np.abs(on_axis.imag)


def _hinf_continuous(a, b, c, d, tol: float) -> float:
    """Bisection on ``gamma`` with the Hamiltonian imaginary-axis test."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not is_hurwitz(a):
        raise UnstableSystemError("A_cl is not Hurwitz; the H-infinity norm is infinite")
    eigs = np.linalg.eigvals(a)
    probes = {0.0}
    probes.update(float(abs(e.imag)) for e in eigs)
    probes.update(float(abs(e)) for e in eigs)
    lower = max([float(np.linalg.norm(d, 2))] + [_sigma_max_ct(a, b, c, d, w) for w in probes])
    if lower == 0.0:
        return 0.0
    d_norm = float(np.linalg.norm(d, 2))

    def crosses(gamma: float) -> np.ndarray:
        return _imaginary_frequencies(_hamiltonian(a, b, c, d, gamma))

    upper = 2.0 * lower
    for _ in range(MAX_BISECTIONS):
        freqs = crosses(upper)
        if freqs.size == 0:
            break
        lower = max([lower] + [_sigma_max_ct(a, b, c, d, w) for w in freqs])
        upper = 2.0 * max(upper, lower)
    for _ in range(MAX_BISECTIONS):
        if upper - lower <= tol * lower:
            break
        mid = np.sqrt(lower * upper)
        if mid <= d_norm:
            lower = mid
            continue
        freqs = crosses(mid)
        if freqs.size:
            lower = max([mid] + [_sigma_max_ct(a, b, c, d, w) for w in freqs])
        else:
            upper = mid
    return float(upper)


def hinf_norm_ct(t: TransferTriple, tol: float = 1e-6) -> float:
    """H-infinity norm of a continuous-time triple (upper end of the final bracket).

    Raises
    ------
    UnstableSystemError
        If ``A_cl`` is not Hurwitz.
    """
    d = np.zeros((t.C_out.shape[0], t.B_in.shape[1]))
    return _hinf_continuous(t.A_cl, t.B_in, t.C_out, d, tol)


def hinf_norm_dt(t: TransferTriple, tol: float = 1e-6) -> float:
    """H-infinity norm on the unit circle via the Cayley transform ``z = (1+s)/(1-s)``."""
    a, b, c = t.A_cl, t.B_in, t.C_out
    if not is_schur(a):
        raise UnstableSystemError("A_cl is not Schur stable; the H-infinity norm is infinite")
    n = a.shape[0]
    m_inv = np.linalg.inv(np.eye(n) + a)
    a_c = m_inv @ (a - np.eye(n))
    b_c = np.sqrt(2.0) * m_inv @ b
    c_c = np.sqrt(2.0) * c @ m_inv
    d_c = -c @ m_inv @ b
    return _hinf_continuous(a_c, b_c, c_c, d_c, tol)


@dataclass(frozen=True)
class ModeCheck:
    """Result for one decoupled subsystem."""

    eigenvalue: float
    stable: bool
    hinf_norm: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.hinf_norm

    def passes(self, tolerance: float) -> bool:
        return self.stable and self.hinf_norm < self.bound * (1.0 + tolerance)


@dataclass
class VerificationReport:
    mode: str
    kind: str
    entries: list[ModeCheck]
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(e.passes(self.tolerance) for e in self.entries)

    @property
    def worst_ratio(self) -> float:
        return max(e.hinf_norm / e.bound for e in self.entries)

    def as_rows(self) -> list[dict]:
        return [
            {
                "eigenvalue": e.eigenvalue,
                "stable": e.stable,
                "hinf_norm": e.hinf_norm,
                "bound": e.bound,
                "margin": e.margin,
                "pass": e.passes(self.tolerance),
            }
            for e in self.entries
        ]


def network_eigenvalues(model, network: Network) -> np.ndarray:
    """Eigenvalues the decoupled tests run over: of L-hat (continuous) or D-tilde (discrete)."""
    if model.mode == "continuous":
        return network.laplacian_eigenvalues()
    return network.stochastic_eigenvalues()


def closed_loop_matrix(model, controller, eigenvalue: float) -> np.ndarray:
    """``A + c*lambda*B K`` (continuous) or ``A + (1 - lambda)*B K`` (discrete)."""
    bk = model.B @ controller.K
    if model.mode == "continuous":
        return model.A + controller.coupling_c * eigenvalue * bk
    return model.A + (1.0 - eigenvalue) * bk


def _check_common(model, network: Network, controller) -> None:
    if controller.mode != model.mode:
        raise ValueError(f"controller is {controller.mode} but model is {model.mode}")
    if controller.K.shape != (model.m, model.n):
        raise ValueError(f"gain K must be {model.m}x{model.n}, got {controller.K.shape}")
    if not network.satisfies_assumption1():
        raise ValueError("network violates Assumption 1 (connected graph with at least one pinned node)")


def _run_modes(model, controller, eigs, b_in, c_out, bound, tolerance, kind) -> VerificationReport:
    hinf = hinf_norm_ct if model.mode == "continuous" else hinf_norm_dt
    stable_test = is_hurwitz if model.mode == "continuous" else is_schur
    entries = []
    for lam in eigs:
        a_cl = closed_loop_matrix(model, controller, float(lam))
        stable = stable_test(a_cl)
        norm = hinf(TransferTriple(a_cl, b_in, c_out)) if stable else float("inf")
        entries.append(ModeCheck(float(lam), stable, norm, bound))
    return VerificationReport(model.mode, kind, entries, float(tolerance))


def verify_stabilization(model, network: Network, controller, tolerance: float = 0.0, eigenvalues=None) -> VerificationReport:
    """Decoupled quadratic-stability test over the network eigenvalues.

    Each mode must be stable with ``||E (.)^{-1} D||_inf < (1/delta)(1 + tolerance)``.
    ``eigenvalues`` overrides the values taken from ``network``.
    """
    _check_common(model, network, controller)
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    if not model.delta > 0:
        raise ValueError("verification needs a positive uncertainty bound delta")
    eigs = network_eigenvalues(model, network) if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
    return _run_modes(model, controller, eigs, model.D, model.E, 1.0 / model.delta, tolerance, "stabilization")


def verify_attenuation(model, network: Network, controller, eps: float | None = None, tolerance: float = 0.0, eigenvalues=None) -> VerificationReport:
    """Scaled unit-attenuation test with input ``[sqrt(eps) delta D, B2/gamma]`` and output ``[E/sqrt(eps); C]``."""
    _check_common(model, network, controller)
    if model.B2 is None or model.C is None or model.gamma is None:
        raise ValueError("attenuation verification needs B2, C and gamma on the model")
    if eps is None:
        eps = controller.certificate.eps if controller.certificate is not None else None
    if eps is None or not eps > 0:
        raise ValueError("a positive scaling eps is required (none in the controller certificate)")
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    root = np.sqrt(eps)
    b_in = np.hstack([root * model.delta * model.D, model.B2 / model.gamma])
    c_out = np.vstack([model.E / root, model.C])
    eigs = network_eigenvalues(model, network) if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
    report = _run_modes(model, controller, eigs, b_in, c_out, 1.0, tolerance, "attenuation")
    report.details["eps"] = float(eps)
    return report


def brl_residual(certificate, model, lambda_i: float, mode: str | None = None, K=None) -> np.ndarray:
    """Bounded-real residual that must be negative definite.

    Continuous mode takes ``lambda_i`` as the effective coupling ``c*lambda``
    and returns ``(A + cl B K) P + P (A + cl B K)^T + delta^2 D D^T + P E^T E P``
    with ``K = -B^T P^{-1} / 2`` unless given.  Discrete mode uses
    ``P = Q^{-1}`` and ``A_hat = A + (1 - lambda_i) B K`` and returns
    ``A_hat^T P A_hat - P + E^T E + delta^2 A_hat^T P D (I - delta^2 D^T P D)^{-1} D^T P A_hat``.
    """
    mode = mode or model.mode
    mat = as_matrix(certificate.matrix, "certificate matrix")
    if not np.all(eig_symmetric(mat)[0] > 0):
        raise ValueError("certificate matrix must be positive definite")
    a, b, d, e, delta = model.A, model.B, model.D, model.E, model.delta
    if mode == "continuous":
        if K is None:
            K = -0.5 * solve_linear(mat.T, b).T
        a_cl = a + lambda_i * b @ np.atleast_2d(K)
        res = a_cl @ mat + mat @ a_cl.T + delta**2 * d @ d.T + mat @ e.T @ e @ mat
        return 0.5 * (res + res.T)
    if mode != "discrete":
        raise ValueError(f"unknown mode {mode!r}")
    if K is None:
        if certificate.W is None:
            raise ValueError("discrete residual needs K or a certificate carrying W")
        K = solve_linear(mat.T, np.atleast_2d(certificate.W).T).T
    p = np.linalg.inv(mat)
    p = 0.5 * (p + p.T)
    a_hat = a + (1.0 - lambda_i) * b @ np.atleast_2d(K)
    inner = np.eye(d.shape[1]) - delta**2 * d.T @ p @ d
    if not np.all(np.linalg.eigvalsh(0.5 * (inner + inner.T)) > 0):
        raise ResidualUndefinedError("I - delta^2 D^T P D is not positive definite")
    pd = p @ d
    res = a_hat.T @ p @ a_hat - p + e.T @ e + delta**2 * a_hat.T @ pd @ np.linalg.solve(inner, pd.T) @ a_hat
    return 0.5 * (res + res.T)
