"""JSON problem and report files.

A problem document looks like::

    {"mode": "ct", "A": [[...]], "B": [[...]], "D": [[...]], "E": [[...]],
     "delta": 10, "graph": {"n": 6, "edges": [[1, 2], ...], "pins": {"1": 2}},
     "simulation": {"seed": 0, "T": 40, "x0": "random"}}

Optional keys are ``B2``, ``C``, ``gamma``, ``kappa`` and, inside
``graph``, ``stochastic``.  A pin weight of ``null`` selects the default
weight (1 in continuous mode, half the stochastic diagonal in discrete
mode).  Unknown keys are errors.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .netgraph import DEFAULT_CT_PIN, DEFAULT_DT_PIN_FRACTION, Graph, Network, PinSet, stochastic_weights
from .synthesis import AgentModel

__all__ = [
    "ProblemError",
    "SimulationSpec",
    "ProblemFile",
    "parse_problem",
    "load_problem",
    "bundled_problem_path",
    "ReportFile",
]

MODE_NAMES = {"ct": "continuous", "dt": "discrete"}
TOP_KEYS = {"mode", "A", "B", "D", "E", "B2", "C", "delta", "gamma", "kappa", "graph", "simulation"}
GRAPH_KEYS = {"n", "edges", "pins", "stochastic"}
SIM_KEYS = {"seed", "T", "steps", "h", "switch_period", "x0"}
BUNDLED = ("example1.json", "example2.json")


class ProblemError(ValueError):
    """All validation errors found in a problem document, each prefixed by its path."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid problem file:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class SimulationSpec:
    seed: int = 0
    T: float | None = None
    steps: int | None = None
    h: float | None = None
    switch_period: float | None = None
    x0: str | tuple[float, ...] = "random"

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "x0": self.x0 if isinstance(self.x0, str) else list(self.x0)}
        for key in ("T", "steps", "h", "switch_period"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @property
    def period(self) -> float:
        return math.inf if self.switch_period is None else self.switch_period

    def initial_state(self, dim: int, seed: int | None = None) -> np.ndarray:
        if isinstance(self.x0, str):
            rng = np.random.default_rng(self.seed if seed is None else seed)
            return rng.normal(size=dim)
        x = np.array(self.x0, dtype=float)
        if x.size != dim:
            raise ValueError(f"simulation.x0 has {x.size} entries, expected {dim}")
        return x


@dataclass(frozen=True)
class ProblemFile:
    """Validated problem in canonical plain-data form (so equality is structural)."""

    mode: str
    matrices: dict
    delta: float
    graph: dict
    gamma: float | None = None
    kappa: float | None = None
    simulation: SimulationSpec | None = None

    @property
    def long_mode(self) -> str:
        return MODE_NAMES[self.mode]

    def model(self) -> AgentModel:
        mats = self.matrices
        return AgentModel(
            mats["A"], mats["B"], mats["D"], mats["E"], self.delta,
            B2=mats.get("B2"), C=mats.get("C"), gamma=self.gamma, mode=self.long_mode,
        )

    def network(self) -> Network:
        g = self.graph
        graph = Graph.from_edges(g["n"], g["edges"])
        pins = PinSet.from_mapping(g["n"], {int(k): v for k, v in g["pins"].items()})
        stoch = np.array(g["stochastic"]) if g.get("stochastic") is not None else None
        return Network(graph, pins, stoch)

    def to_dict(self) -> dict:
        out = {"mode": self.mode}
        out.update(self.matrices)
        out["delta"] = self.delta
        if self.gamma is not None:
            out["gamma"] = self.gamma
        if self.kappa is not None:
            out["kappa"] = self.kappa
        out["graph"] = self.graph
        if self.simulation is not None:
            out["simulation"] = self.simulation.to_dict()
        return out

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def _matrix(doc: dict, key: str, errors: list[str], prefix: str = "$") -> list | None:
    value = doc.get(key)
    path = f"{prefix}.{key}"
    if not isinstance(value, list) or not value or not all(isinstance(r, list) and r for r in value):
        errors.append(f"{path}: expected a non-empty array of non-empty rows")
        return None
    width = len(value[0])
    if any(len(r) != width for r in value):
        errors.append(f"{path}: rows have unequal lengths")
        return None
    out = []
    for i, row in enumerate(value):
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                errors.append(f"{path}[{i}][{j}]: expected a finite number, got {v!r}")
                return None
        out.append([float(v) for v in row])
    return out


def _number(doc: dict, key: str, path: str, errors: list[str], *, positive=False, nonneg=False) -> float | None:
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        errors.append(f"{path}: expected a finite number, got {value!r}")
        return None
    if positive and not value > 0:
        errors.append(f"{path}: must be positive, got {value}")
        return None
    if nonneg and not value >= 0:
        errors.append(f"{path}: must be nonnegative, got {value}")
        return None
    return float(value)


def _unknown(doc: dict, allowed: set, path: str, errors: list[str]) -> None:
    for key in sorted(set(doc) - allowed):
        errors.append(f"{path}.{key}: unknown key")


def _shape(m):
    return (len(m), len(m[0])) if m is not None else None


def _check_dims(mats: dict, errors: list[str]) -> None:
    a = _shape(mats.get("A"))
    if a is None:
        return
    n = a[0]
    if a[1] != n:
        errors.append(f"$.A: must be square, got {a[0]}x{a[1]}")
        return
    rows_n = {"B": "n x m", "D": "n x j", "B2": "n x p"}
    for key, desc in rows_n.items():
        s = _shape(mats.get(key))
        if s is not None and s[0] != n:
            errors.append(f"$.{key}: expected {n} rows ({desc} with n={n}), got {s[0]}x{s[1]}")
    for key, desc in (("E", "k x n"), ("C", "l x n")):
        s = _shape(mats.get(key))
        if s is not None and s[1] != n:
            errors.append(f"$.{key}: expected {n} columns ({desc} with n={n}), got {s[0]}x{s[1]}")


def _parse_graph(doc, mode: str | None, errors: list[str]) -> dict | None:
    if not isinstance(doc, dict):
        errors.append("$.graph: expected an object")
        return None
    _unknown(doc, GRAPH_KEYS, "$.graph", errors)
    n = doc.get("n")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        errors.append(f"$.graph.n: expected a positive integer, got {n!r}")
        return None
    edges = []
    for idx, e in enumerate(doc.get("edges", [])):
        ok = (isinstance(e, list) and len(e) == 2
              and all(isinstance(v, int) and not isinstance(v, bool) for v in e))
        if not ok:
            errors.append(f"$.graph.edges[{idx}]: expected a pair of integers, got {e!r}")
        elif not all(1 <= v <= n for v in e) or e[0] == e[1]:
            errors.append(f"$.graph.edges[{idx}]: invalid edge {e} for n={n}")
        else:
            edges.append(tuple(sorted(e)))
    stochastic = None
    if doc.get("stochastic") is not None:
        stochastic = _matrix(doc, "stochastic", errors, "$.graph")
        if stochastic is not None and _shape(stochastic) != (n, n):
            errors.append(f"$.graph.stochastic: expected {n}x{n}, got {_shape(stochastic)}")
            stochastic = None
    pins_doc = doc.get("pins", {})
    pins: dict[str, float] = {}
    if not isinstance(pins_doc, dict):
        errors.append("$.graph.pins: expected an object mapping node index to weight")
        pins_doc = {}
    diag = np.ones(n)
    if stochastic is not None or mode == "dt":
        try:
            diag = np.diag(np.array(stochastic) if stochastic is not None
                           else stochastic_weights(Graph.from_edges(n, edges)))
        except ValueError:
            pass
    for key, value in pins_doc.items():
        path = f"$.graph.pins.{key}"
        try:
            node = int(key)
        except ValueError:
            errors.append(f"{path}: node key must be an integer")
            continue
        if not 1 <= node <= n:
            errors.append(f"{path}: node outside [1, {n}]")
            continue
        if value is None:
            weight = DEFAULT_CT_PIN if mode == "ct" else DEFAULT_DT_PIN_FRACTION * float(diag[node - 1])
        elif isinstance(value, bool) or not isinstance(value, (int, float)) or not value >= 0:
            errors.append(f"{path}: expected a nonnegative number or null, got {value!r}")
            continue
        else:
            weight = float(value)
        if weight > 0:
            pins[str(node)] = weight
    out = {"n": n, "edges": [list(e) for e in sorted(set(edges))], "pins": dict(sorted(pins.items(), key=lambda kv: int(kv[0])))}
    if stochastic is not None:
        out["stochastic"] = stochastic
    return out


def _parse_simulation(doc, mode: str | None, errors: list[str]) -> SimulationSpec | None:
    if not isinstance(doc, dict):
        errors.append("$.simulation: expected an object")
        return None
    _unknown(doc, SIM_KEYS, "$.simulation", errors)
    kwargs = {}
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"$.simulation.seed: expected a nonnegative integer, got {seed!r}")
    kwargs["seed"] = seed
    for key in ("T", "h", "switch_period"):
        if doc.get(key) is not None:
            kwargs[key] = _number(doc, key, f"$.simulation.{key}", errors, positive=True)
    if doc.get("steps") is not None:
        steps = doc["steps"]
        if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
            errors.append(f"$.simulation.steps: expected a positive integer, got {steps!r}")
        kwargs["steps"] = steps
    x0 = doc.get("x0", "random")
    if x0 == "random":
        kwargs["x0"] = "random"
    elif isinstance(x0, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in x0):
        kwargs["x0"] = tuple(float(v) for v in x0)
    else:
        errors.append(f"$.simulation.x0: expected \"random\" or a list of numbers, got {x0!r}")
    if mode == "ct" and "steps" in kwargs and "T" not in kwargs:
        errors.append("$.simulation: continuous problems use T, not steps")
    if mode == "dt" and "T" in kwargs and "steps" not in kwargs:
        errors.append("$.simulation: discrete problems use steps, not T")
    return SimulationSpec(**kwargs)


def parse_problem(text: str) -> ProblemFile:
    """Parse and validate a JSON problem document.

    Raises
    ------
    ProblemError
        Listing every violation found, each with a path such as ``$.B``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError([f"$: not valid JSON ({exc})"]) from exc
    if not isinstance(doc, dict):
        raise ProblemError(["$: expected a JSON object"])
    errors: list[str] = []
    _unknown(doc, TOP_KEYS, "$", errors)
    mode = doc.get("mode")
    if mode not in MODE_NAMES:
        errors.append(f"$.mode: expected \"ct\" or \"dt\", got {mode!r}")
        mode = None
    mats = {}
    for key in ("A", "B", "D", "E"):
        if key not in doc:
            errors.append(f"$.{key}: missing")
        else:
            mats[key] = _matrix(doc, key, errors)
    for key in ("B2", "C"):
        if key in doc:
            mats[key] = _matrix(doc, key, errors)
    _check_dims(mats, errors)
    delta = _number(doc, "delta", "$.delta", errors, nonneg=True) if "delta" in doc else None
    if "delta" not in doc:
        errors.append("$.delta: missing")
    gamma = _number(doc, "gamma", "$.gamma", errors, positive=True) if "gamma" in doc else None
    have = [k in doc for k in ("B2", "C", "gamma")]
    if any(have) and not all(have):
        errors.append("$: B2, C and gamma must be given together")
    kappa = None
    if "kappa" in doc:
        kappa = _number(doc, "kappa", "$.kappa", errors, positive=True)
        if kappa is not None and not kappa < 1:
            errors.append(f"$.kappa: must lie in (0, 1), got {kappa}")
    graph = _parse_graph(doc["graph"], mode, errors) if "graph" in doc else None
    if "graph" not in doc:
        errors.append("$.graph: missing")
    sim = _parse_simulation(doc["simulation"], mode, errors) if "simulation" in doc else None
    if errors:
        raise ProblemError(errors)
    problem = ProblemFile(mode, mats, delta, graph, gamma, kappa, sim)
    try:
        network = problem.network()
        problem.model()
        if mode == "dt":
            network.pinned_stochastic()
    except ValueError as exc:
        raise ProblemError([f"$.graph: {exc}" if "pin" in str(exc) or "stochastic" in str(exc) else f"$: {exc}"]) from exc
    return problem


def bundled_problem_path(name: str):
    """Path-like handle to a bundled fixture (``example1.json`` or ``example2.json``)."""
    if name not in BUNDLED:
        raise FileNotFoundError(name)
    return resources.files("robustmas") / "data" / name


def load_problem(path: str) -> ProblemFile:
    """Read a problem from ``path``, falling back to the bundled fixtures by file name."""
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        text = bundled_problem_path(str(path).rsplit("/", 1)[-1]).read_text()
    return parse_problem(text)


@dataclass
class ReportFile:
    """Machine-readable result of a CLI command."""

    command: list[str]
    digest: str
    version: str
    status: str
    body: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "digest": self.digest,
            "version": self.version,
            "status": self.status,
            "body": self.body,
            "timings": self.timings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ReportFile":
        doc = json.loads(text)
        return cls(doc["command"], doc["digest"], doc["version"], doc["status"], doc["body"], doc["timings"])
