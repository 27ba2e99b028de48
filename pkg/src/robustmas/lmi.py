"""Small-scale LMI feasibility via a phase-I log-det barrier method.

Problems are affine symmetric-matrix inequalities ``F_k(x) < 0`` in a
vector ``x`` of scalar coordinates.  Decision blocks (scalars, symmetric
and rectangular matrices) are expanded into coordinates, and constraints
are written with :class:`AffineExpr`, a tiny expression type that tracks
one constant matrix plus one coefficient matrix per coordinate::

    P = VariableBlock.symmetric("P", 2)
    tau = VariableBlock.scalar("tau", lower=0.0)
    prob = assemble([P, tau], [lambda v: A @ v["P"] + v["P"] @ A.T - v["tau"] * (B @ B.T)])
    result = solve_feasibility(prob)

The solver minimises ``t`` subject to ``F_k(x) <= t I`` with a damped
Newton method on the barrier ``-sum log det(t I - F_k(x))``.  A point is
reported feasible once ``t`` drops below ``-margin_req``; infeasibility is
only certified by convergence of the phase-I problem, never by a dual ray.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .matrixcore import eig_symmetric

logger = logging.getLogger(__name__)

__all__ = [
    "AffineExpr",
    "VariableBlock",
    "Constraint",
    "LmiProblem",
    "FeasibilityResult",
    "ParameterSearch",
    "InfeasibleStartError",
    "assemble",
    "bmat",
    "solve_feasibility",
    "maximize_parameter",
    "FEASIBLE",
    "INFEASIBLE",
    "INDETERMINATE",
]

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INDETERMINATE = "indeterminate"

SYMMETRY_RTOL = 1e-10
TRUST_RADIUS_INIT = 10.0
TRUST_RADIUS_GROWTH = 10.0
TRUST_RADIUS_MAX = 1e12


class AffineExpr:
    """Matrix-valued affine function ``const + sum_i x_i * coeffs[i]``."""

    __array_ufunc__ = None  # make ndarray @ expr dispatch to __rmatmul__

    def __init__(self, const: np.ndarray, coeffs: np.ndarray):
        const = np.asarray(const, dtype=float)
        if const.ndim != 2:
            raise ValueError("constant part must be 2-D")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim != 3 or coeffs.shape[1:] != const.shape:
            raise ValueError(f"coefficient stack {coeffs.shape} does not match constant {const.shape}")
        self.const = const
        self.coeffs = coeffs

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @property
    def nvars(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def constant(cls, value, nvars: int) -> "AffineExpr":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(value, np.zeros((nvars,) + value.shape))

    def _coerce(self, other) -> "AffineExpr":
        if isinstance(other, AffineExpr):
            if other.nvars != self.nvars:
                raise ValueError("expressions belong to different problems")
            return other
        return AffineExpr.constant(other, self.nvars)

    def __add__(self, other):
        other = self._coerce(other)
        if other.shape != self.shape:
            if other.shape == (1, 1):
                other = AffineExpr(np.broadcast_to(other.const, self.shape), np.broadcast_to(other.coeffs, self.coeffs.shape))
            elif self.shape == (1, 1):
                return other + self
            else:
                raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return AffineExpr(self.const + other.const, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return AffineExpr(-self.const, -self.coeffs)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, scalar):
        if isinstance(scalar, AffineExpr):
            if scalar.shape != (1, 1) or np.any(scalar.coeffs) and np.any(self.coeffs):
                raise TypeError("product of two non-constant expressions is not affine")
            if not np.any(self.coeffs):
                return scalar * self.const
            scalar = float(scalar.const[0, 0])
        arr = np.asarray(scalar, dtype=float)
        if arr.ndim == 0:
            return AffineExpr(self.const * arr, self.coeffs * arr)
        # scalar expression times a constant matrix
        if self.shape != (1, 1):
            raise TypeError("elementwise products with matrices are not supported")
        arr = np.atleast_2d(arr)
        return AffineExpr(self.const[0, 0] * arr, self.coeffs[:, 0, 0][:, None, None] * arr[None])

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return AffineExpr(self.const @ other, self.coeffs @ other)

    def __rmatmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return AffineExpr(other @ self.const, np.einsum("ij,ajk->aik", other, self.coeffs))

    @property
    def T(self) -> "AffineExpr":
        return AffineExpr(self.const.T, self.coeffs.transpose(0, 2, 1))

    def value(self, x) -> np.ndarray:
        return self.const + np.tensordot(np.asarray(x, dtype=float), self.coeffs, axes=1)

    def __repr__(self) -> str:
        return f"AffineExpr(shape={self.shape}, nvars={self.nvars})"


def bmat(blocks: Sequence[Sequence], nvars: int | None = None) -> AffineExpr:
    """Assemble a block matrix; ``None`` entries are zero blocks of inferred size."""
    if nvars is None:
        nvars = next(
            (b.nvars for row in blocks for b in row if isinstance(b, AffineExpr)),
            0,
        )
    nrows, ncols = len(blocks), len(blocks[0])
    heights: list[int | None] = [None] * nrows
    widths: list[int | None] = [None] * ncols
    for i, row in enumerate(blocks):
        if len(row) != ncols:
            raise ValueError("ragged block matrix")
        for j, b in enumerate(row):
            if b is None:
                continue
            shape = b.shape if isinstance(b, AffineExpr) else np.atleast_2d(np.asarray(b)).shape
            for store, idx, size in ((heights, i, shape[0]), (widths, j, shape[1])):
                if store[idx] is None:
                    store[idx] = size
                elif store[idx] != size:
                    raise ValueError(f"inconsistent block size at ({i}, {j}): {shape}")
    if None in heights or None in widths:
        raise ValueError("every block row and column needs at least one explicit block")
    total = (sum(heights), sum(widths))
    const = np.zeros(total)
    coeffs = np.zeros((nvars,) + total)
    r0 = 0
    for i, row in enumerate(blocks):
        c0 = 0
        for j, b in enumerate(row):
            rs, cs = slice(r0, r0 + heights[i]), slice(c0, c0 + widths[j])
            if isinstance(b, AffineExpr):
                const[rs, cs] = b.const
                coeffs[:, rs, cs] = b.coeffs
            elif b is not None:
                const[rs, cs] = np.atleast_2d(np.asarray(b, dtype=float))
            c0 += widths[j]
        r0 += heights[i]
    return AffineExpr(const, coeffs)


@dataclass(frozen=True)
class VariableBlock:
    """A named decision block: ``scalar``, ``symmetric`` (n x n) or ``matrix`` (m x n)."""

    name: str
    kind: str
    shape: tuple[int, int]
    lower: float | None = None

    def __post_init__(self):
        if self.kind not in ("scalar", "symmetric", "matrix"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        r, c = self.shape
        if r < 1 or c < 1:
            raise ValueError(f"variable {self.name!r} must have positive size")
        if self.kind == "scalar" and self.shape != (1, 1):
            raise ValueError("scalar variables have shape (1, 1)")
        if self.kind == "symmetric" and r != c:
            raise ValueError("symmetric variables must be square")
        if self.lower is not None and self.kind != "scalar":
            raise ValueError("lower bounds are only supported on scalar variables")

    @classmethod
    def scalar(cls, name: str, lower: float | None = None) -> "VariableBlock":
        return cls(name, "scalar", (1, 1), lower)

    @classmethod
    def symmetric(cls, name: str, n: int) -> "VariableBlock":
        return cls(name, "symmetric", (n, n))

    @classmethod
    def matrix(cls, name: str, rows: int, cols: int) -> "VariableBlock":
        return cls(name, "matrix", (rows, cols))

    @property
    def size(self) -> int:
        r, c = self.shape
        if self.kind == "symmetric":
            return r * (r + 1) // 2
        return r * c

    def basis(self) -> np.ndarray:
        """Coordinate basis matrices; symmetric blocks use E_ii and E_ij + E_ji."""
        r, c = self.shape
        out = np.zeros((self.size, r, c))
        if self.kind == "symmetric":
            k = 0
            for i in range(r):
                for j in range(i, r):
                    out[k, i, j] = out[k, j, i] = 1.0
                    k += 1
        else:
            for k in range(r * c):
                out[k, k // c, k % c] = 1.0
        return out

    def initial(self, scale: float) -> np.ndarray:
        r, c = self.shape
        if self.kind == "scalar":
            return np.array([max(scale, (self.lower or 0.0) + scale)])
        if self.kind == "symmetric":
            return self.pack(scale * np.eye(r))
        return np.zeros(r * c)

    def pack(self, value) -> np.ndarray:
        value = np.atleast_2d(np.asarray(value, dtype=float))
        if value.shape != self.shape:
            raise ValueError(f"value for {self.name!r} has shape {value.shape}, expected {self.shape}")
        if self.kind == "symmetric":
            iu = np.triu_indices(self.shape[0])
            return 0.5 * (value + value.T)[iu]
        return value.ravel().copy()

    def unpack(self, coords: np.ndarray):
        if self.kind == "scalar":
            return float(coords[0])
        return np.tensordot(coords, self.basis(), axes=1)


@dataclass(frozen=True)
class Constraint:
    """One block ``const + sum_i x_i coeffs[i] < 0``."""

    name: str
    const: np.ndarray
    coeffs: np.ndarray

    @property
    def size(self) -> int:
        return self.const.shape[0]

    def value(self, x) -> np.ndarray:
        return self.const + np.tensordot(np.asarray(x, dtype=float), self.coeffs, axes=1)


@dataclass(frozen=True)
class LmiProblem:
    variables: tuple[VariableBlock, ...]
    constraints: tuple[Constraint, ...]
    scale: float = 1.0

    @property
    def dimension(self) -> int:
        return sum(v.size for v in self.variables)

    def offsets(self) -> dict[str, slice]:
        out, k = {}, 0
        for v in self.variables:
            out[v.name] = slice(k, k + v.size)
            k += v.size
        return out

    def unpack(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        return {v.name: v.unpack(x[sl]) for v, sl in zip(self.variables, self.offsets().values())}

    def pack(self, values: Mapping) -> np.ndarray:
        return np.concatenate([v.pack(values[v.name]) for v in self.variables])

    def initial_point(self) -> np.ndarray:
        return np.concatenate([v.initial(self.scale) for v in self.variables])

    def max_eigenvalues(self, x) -> list[float]:
        return [float(eig_symmetric(c.value(x))[0][-1]) for c in self.constraints]


def assemble(
    variables: Sequence[VariableBlock],
    constraint_builders: Iterable,
    scale: float = 1.0,
) -> LmiProblem:
    """Expand decision blocks into coordinates and evaluate constraint builders.

    Each builder is a callable ``f(vars) -> AffineExpr`` (or a ``(name, f)``
    pair) receiving a mapping from variable name to its affine expression.
    Scalar lower bounds become extra 1x1 constraints ``lower - x < 0``.
    """
    names = [v.name for v in variables]
    if len(set(names)) != len(names):
        raise ValueError(f"variable names must be unique, got {names}")
    if not scale > 0:
        raise ValueError("problem scale must be positive")
    m = sum(v.size for v in variables)
    exprs: dict[str, AffineExpr] = {}
    k = 0
    for v in variables:
        coeffs = np.zeros((m,) + v.shape)
        coeffs[k : k + v.size] = v.basis()
        exprs[v.name] = AffineExpr(np.zeros(v.shape), coeffs)
        k += v.size

    constraints: list[Constraint] = []
    for idx, item in enumerate(constraint_builders):
        name, builder = item if isinstance(item, tuple) else (f"c{idx}", item)
        expr = builder(exprs)
        if not isinstance(expr, AffineExpr):
            expr = AffineExpr.constant(expr, m)
        r, c = expr.shape
        if r != c:
            raise ValueError(f"constraint {name!r} is not square: {expr.shape}")
        if expr.nvars != m:
            raise ValueError(f"constraint {name!r} has {expr.nvars} coordinates, expected {m}")
        ref = max(np.abs(expr.const).max(), np.abs(expr.coeffs).max() if m else 0.0, 1.0)
        asym = max(
            np.abs(expr.const - expr.const.T).max(),
            np.abs(expr.coeffs - expr.coeffs.transpose(0, 2, 1)).max() if m else 0.0,
        )
        if asym > SYMMETRY_RTOL * ref:
            raise ValueError(f"constraint {name!r} is not symmetric (asymmetry {asym:.3e})")
        const = 0.5 * (expr.const + expr.const.T)
        coeffs = 0.5 * (expr.coeffs + expr.coeffs.transpose(0, 2, 1))
        constraints.append(Constraint(name, const, coeffs))

    for v in variables:
        if v.lower is not None:
            coeffs = np.zeros((m, 1, 1))
            coeffs[exprs[v.name].coeffs[:, 0, 0] != 0] = -1.0
            constraints.append(Constraint(f"{v.name}>{v.lower:g}", np.array([[v.lower]]), coeffs))
    if not constraints:
        raise ValueError("problem has no constraints")
    return LmiProblem(tuple(variables), tuple(constraints), float(scale))


@dataclass
class FeasibilityResult:
    status: str
    point: dict | None
    margin: float
    phase1_value: float
    x: np.ndarray | None = None
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


class _PhaseOne:
    """Barrier machinery for ``min t  s.t.  t I - F_k(x)/s > 0``, ``|x| < R``."""

    def __init__(self, problem: LmiProblem):
        s = problem.scale
        m = problem.dimension
        self.m = m
        self.blocks = []
        for c in problem.constraints:
            k = c.size
            g0 = -c.const / s
            ga = np.concatenate([-c.coeffs / s, np.eye(k)[None]], axis=0)
            self.blocks.append((g0, ga))
        self.nu = sum(c.size for c in problem.constraints) + 1

    def slack_max_eig(self, x: np.ndarray) -> float:
        worst = -np.inf
        for g0, ga in self.blocks:
            f = -(g0 + np.tensordot(x, ga[:-1], axes=1))
            worst = max(worst, float(np.linalg.eigvalsh(0.5 * (f + f.T))[-1]))
        return worst

    def barrier(self, z: np.ndarray, radius: float, derivs: bool = True):
        """Return (value, grad, hess) of the barrier, or ``None`` outside the domain."""
        m = self.m
        x = z[:m]
        r2 = radius * radius - float(x @ x)
        if r2 <= 0:
            return None
        value = -math.log(r2)
        grad = np.zeros(m + 1)
        hess = np.zeros((m + 1, m + 1))
        if derivs:
            grad[:m] = 2.0 * x / r2
            hess[:m, :m] = 2.0 * np.eye(m) / r2 + 4.0 * np.outer(x, x) / (r2 * r2)
        for g0, ga in self.blocks:
            g = g0 + np.tensordot(z, ga, axes=1)
            try:
                chol = np.linalg.cholesky(0.5 * (g + g.T))
            except np.linalg.LinAlgError:
                return None
            value -= 2.0 * float(np.sum(np.log(np.diag(chol))))
            if derivs:
                inv_l = np.linalg.inv(chol)
                s_inv = inv_l.T @ inv_l
                sg = np.einsum("ij,ajk->aik", s_inv, ga)
                grad -= np.einsum("aii->a", sg)
                hess += np.einsum("aij,bji->ab", sg, sg)
        return value, grad, hess


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.maximum(np.diag(hess), 1e-300))
    scaled = hess / np.outer(d, d)
    try:
        chol = np.linalg.cholesky(scaled)
        y = np.linalg.solve(chol.T, np.linalg.solve(chol, -grad / d))
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(scaled, -grad / d, rcond=None)[0]
    return y / d


def solve_feasibility(
    problem: LmiProblem,
    tol: float = 1e-9,
    margin_req: float | None = None,
    *,
    max_newton: int = 500,
    target_margin: float = 1e-3,
) -> FeasibilityResult:
    """Find ``x`` with every constraint below ``-margin_req`` (raw units).

    Parameters
    ----------
    tol : float
        Phase-I convergence tolerance on the barrier duality gap, relative
        to the problem scale.
    margin_req : float, optional
        Required strict-feasibility gap; defaults to ``1e-8 * problem.scale``.
    max_newton : int
        Cap on the total number of Newton steps; hitting it yields
        ``indeterminate`` unless a qualifying point was already found.
    target_margin : float
        Normalised margin at which the search stops early.  Below this the
        solver keeps minimising so that certificates are not needlessly
        close to the boundary.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    s = problem.scale
    if margin_req is None:
        margin_req = 1e-8 * s
    if not margin_req > 0:
        raise ValueError("margin_req must be positive")
    req = margin_req / s
    target = max(target_margin, req)
    ph = _PhaseOne(problem)
    m = ph.m

    x = problem.initial_point()
    t = ph.slack_max_eig(x) + 1.0
    z = np.concatenate([x, [t]])
    base = max(float(np.linalg.norm(x)), 1.0)
    radius, radius_max = TRUST_RADIUS_INIT * base, TRUST_RADIUS_MAX * base
    mu = max(1.0, abs(t))
    newton = 0
    expansions = 0
    best_x, best_t = x.copy(), ph.slack_max_eig(x)
    status = INDETERMINATE
    reason = "iteration cap"

    def objective(zz):
        out = ph.barrier(zz, radius)
        if out is None:
            return None
        val, g, h = out
        g[m] += 1.0 / mu
        return val + zz[m] / mu, g, h

    while newton < max_newton:
        # centering by damped Newton
        centered = False
        for _ in range(60):
            out = objective(z)
            if out is None:  # only possible after a radius change; should not happen
                raise RuntimeError("phase-I iterate left the barrier domain")
            fval, g, h = out
            dz = _newton_direction(h, g)
            dec2 = float(-g @ dz)
            newton += 1
            centered = dec2 <= 0.25
            if dec2 / 2 < 1e-10:
                break
            step = 1.0 / (1.0 + math.sqrt(max(dec2, 0.0))) if dec2 > 0.0625 else 1.0
            while step > 1e-12:
                trial = z + step * dz
                tv = ph.barrier(trial, radius, derivs=False)
                if tv is not None and tv[0] + trial[m] / mu <= fval + 0.25 * step * float(g @ dz) + 1e-12 * abs(fval):
                    break
                step *= 0.5
            else:
                break
            z = trial
            if newton >= max_newton:
                break

        x = z[:m]
        t_true = ph.slack_max_eig(x)
        if t_true < best_t:
            best_x, best_t = x.copy(), t_true
        gap = ph.nu * mu
        xnorm = float(np.linalg.norm(x))
        # Lagrangian lower bounds on the phase-I optimum over |x| <= R'.  The
        # trust-region multiplier adds a term growing with R', so a bound for
        # the current radius says nothing about larger ones.  The factor 2
        # absorbs inexact centering.
        lam = mu / (radius * radius - xnorm * xnorm)
        lower_here = z[m] - 2.0 * (gap + 2.0 * lam * xnorm * (radius - xnorm))
        lower_all = z[m] - 2.0 * (gap + 2.0 * lam * xnorm * (radius_max - xnorm))
        logger.debug("mu=%.1e t=%.6e gap=%.1e R=%.1e newton=%d", mu, t_true, gap, radius, newton)

        if best_t < -target:
            status, reason = FEASIBLE, "target margin reached"
            break
        if not centered:
            # the duality bounds below only hold near the central path
            continue
        converged = gap < tol * max(1.0, abs(z[m]))
        if converged and best_t < -req:
            status, reason = FEASIBLE, "phase-I converged below required margin"
            break
        if lower_here > -req or converged:
            if lower_all <= -req and radius < radius_max:
                radius = min(radius * TRUST_RADIUS_GROWTH, radius_max)
                expansions += 1
                mu = max(mu, 1e-4)
                continue
            if best_t < -req:
                status, reason = FEASIBLE, "phase-I converged below required margin"
            elif lower_all >= 0.0 or (converged and best_t >= 0.0):
                status, reason = INFEASIBLE, "phase-I optimum is nonnegative"
            elif converged or best_t < 0.0:
                status, reason = INDETERMINATE, "phase-I optimum lies within the required margin of zero"
            else:
                # cannot reach the margin, but the sign of the optimum is still open
                mu /= 10.0
                continue
            break
        mu /= 10.0

    if status == INDETERMINATE and best_t < -req:
        status, reason = FEASIBLE, "required margin reached before iteration cap"

    raw_max = max(problem.max_eigenvalues(best_x))
    diagnostics = {
        "reason": reason,
        "newton_steps": newton,
        "trust_radius": radius,
        "radius_expansions": expansions,
        "final_mu": mu,
        "margin_req": margin_req,
    }
    if status == FEASIBLE and not -raw_max > margin_req:
        # normalised and raw evaluations disagree; never claim an unsound point
        status = INDETERMINATE
        diagnostics["reason"] = "certificate check failed on raw constraints"
    point = problem.unpack(best_x) if status == FEASIBLE else None
    return FeasibilityResult(
        status=status,
        point=point,
        margin=-raw_max,
        phase1_value=best_t * s,
        x=best_x,
        iterations=newton,
        diagnostics=diagnostics,
    )


class InfeasibleStartError(ValueError):
    """The lower end of a parameter search is not feasible."""


@dataclass
class ParameterSearch:
    """Outcome of :func:`maximize_parameter`.

    ``value`` is the largest parameter certified feasible.  When
    ``unbounded`` is set the family stayed feasible up to ``cap`` and
    ``infeasible_at`` is ``None``.
    """

    value: float
    unbounded: bool
    infeasible_at: float | None
    cap: float
    history: list[tuple[float, str, float]] = field(default_factory=list)
    witness: FeasibilityResult | None = None

    def __float__(self) -> float:
        return float(self.value)


def maximize_parameter(
    family: Callable[[float], LmiProblem],
    lo: float,
    hi_init: float,
    tol: float = 1e-3,
    *,
    cap: float = 1e6,
    growth: float = 2.0,
    solve: Callable[[LmiProblem], FeasibilityResult] = solve_feasibility,
) -> ParameterSearch:
    """Largest parameter keeping ``family(p)`` feasible.

    Expands ``hi`` geometrically until infeasibility (or ``cap``), then
    bisects to a relative bracket width of ``tol``.  ``indeterminate``
    solves count as infeasible.
    """
    if not (0 < tol < 1):
        raise ValueError("tol must lie in (0, 1)")
    history: list[tuple[float, str, float]] = []

    def feasible(p: float) -> FeasibilityResult:
        res = solve(family(p))
        history.append((p, res.status, res.phase1_value))
        return res

    start = feasible(lo)
    if not start.feasible:
        raise InfeasibleStartError(f"family is not feasible at the lower end {lo:g} ({start.status})")
    best, witness = lo, start
    hi = max(hi_init, lo * growth)
    while True:
        if hi >= cap:
            res = feasible(cap)
            if res.feasible:
                return ParameterSearch(cap, True, None, cap, history, res)
            hi = cap
            break
        res = feasible(hi)
        if not res.feasible:
            break
        best, witness = hi, res
        hi *= growth

    while hi - best > tol * hi:
        mid = 0.5 * (best + hi)
        res = feasible(mid)
        if res.feasible:
            best, witness = mid, res
        else:
            hi = mid
    return ParameterSearch(best, False, hi, cap, history, witness)
