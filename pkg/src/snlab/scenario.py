"""Scenario files: YAML load, validation, defaults, digest and builders."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .carleman import CarlemanParams, build_eta0, rho_process
from .errors import ConfigError
from .game import BACKWARD, FORWARD, Follower, Game
from .grid import SpatialGrid, make_mask, whole_mask
from .lattice import AdaptedField, build_tree
from .spde import Coefficient, per_level_coefficient

DEFAULTS = {
    "grid": {"L": 1.0, "N": 21},
    "tree": {"T": 0.2, "K": 8},
    "coefficients": {"a1": 0.0, "a2": 0.0},
    "control_region": None,
    "followers": [],
    "goal": {"direction": "forward", "type": "null", "epsilon": 1e-2},
    "data": {
        "y0": {"kind": "eigenmode", "n": 1, "amplitude": 1.0},
        "yT": {"kind": "eigenmode", "n": 1, "amplitude": 1.0},
    },
    "targets": {"kind": "zero", "amplitude": 1.0, "scale_by_rho": True},
    "leader": {"kind": "random", "amplitude": 1.0},
    "weights": {"lambda": 1.0, "mu": 2.0, "critical": None, "eta_height": 0.1},
    "solver": {
        "nash_rtol": 1e-10,
        "nash_restart": 50,
        "nash_maxiter": 500,
        "stationarity_tol": 1e-6,
        "coupled_tol": 1e-12,
        "duality_tol": 1e-10,
        "hum_tol": 1e-8,
        "hum_method": "lanczos",
        "hum_maxiter": 2000,
        "exact_maxiter": 400,
    },
    "experiments": {
        "duality_trials": 100,
        "observability_trials": 20,
        "observability_system": "backward",
        "ascent_steps": 200,
        "beta_grid": [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
        "target_draws": 20,
    },
    "seed": 0,
}

FOLLOWER_DEFAULTS = {"alpha": 1.0, "beta": 100.0, "observe_Y": None, "alpha_Y": 0.0}
COMMANDS = (
    "nash-solve",
    "null-control",
    "approx-control",
    "exact-control",
    "duality-check",
    "observability-estimate",
    "carleman-weights",
    "coercivity-scan",
)
CONTROL_GOALS = ("null", "approximate", "exact")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class Scenario:
    """Validated, defaults-filled scenario with builders for the solver objects."""

    def __init__(self, raw: dict):
        self.raw = raw

    # --- persistence ----------------------------------------------------
    @property
    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.dump())

    def with_overrides(self, seed=None, lam=None, epsilon=None) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if lam is not None:
            raw["weights"]["lambda"] = float(lam)
        if epsilon is not None:
            raw["goal"]["epsilon"] = float(epsilon)
        return from_dict(raw)

    # --- builders ---------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def rng(self, stream=0):
        return np.random.default_rng([self.seed, stream])

    def grid(self) -> SpatialGrid:
        g = self.raw["grid"]
        return SpatialGrid(float(g["L"]), int(g["N"]))

    def tree(self):
        t = self.raw["tree"]
        return build_tree(float(t["T"]), int(t["K"]))

    def _mask(self, sp, spec):
        if spec == "whole":
            return whole_mask(sp)
        if spec is None:
            return make_mask(sp, [])
        return make_mask(sp, spec)

    def coefficient(self, tree, sp, spec):
        if isinstance(spec, (int, float)):
            return Coefficient(float(spec))
        if isinstance(spec, list):
            return per_level_coefficient(tree, sp, spec)
        return _expression_coefficient(tree, sp, spec)

    def game(self, betas=None, alphas=None, alphas_Y=None) -> Game:
        tree, sp = self.tree(), self.grid()
        fol = []
        for i, f in enumerate(self.raw["followers"]):
            fol.append(
                Follower(
                    self._mask(sp, f["control"]),
                    self._mask(sp, f["observe"]),
                    alpha=float(f["alpha"] if alphas is None else alphas[i]),
                    beta=float(f["beta"] if betas is None else betas[i]),
                    Ot=self._mask(sp, f["observe_Y"]),
                    alpha_t=float(f["alpha_Y"] if alphas_Y is None else alphas_Y[i]),
                )
            )
        c = self.raw["coefficients"]
        return Game(
            tree, sp, self._mask(sp, self.raw["control_region"]), fol,
            a1=self.coefficient(tree, sp, c["a1"]), a2=self.coefficient(tree, sp, c["a2"]),
        )

    def critical_set(self):
        w = self.raw["weights"]
        if w["critical"] is not None:
            return tuple(w["critical"])
        G0 = self.raw["control_region"]
        if G0 == "whole":
            G0 = [1, int(self.raw["grid"]["N"])]
        obs = [f["observe"] for f in self.raw["followers"]]
        lo, hi = G0
        for o in obs:
            if o is not None and o != "whole":
                lo, hi = max(lo, o[0]), min(hi, o[1])
        c = (lo + hi) // 2
        return (c, c) if lo <= hi else ((G0[0] + G0[1]) // 2,) * 2

    def carleman(self, direction=None) -> CarlemanParams:
        w = self.raw["weights"]
        direction = direction or self.raw["goal"]["direction"]
        eta = build_eta0(self.grid(), self.critical_set(), float(w["eta_height"]))
        return CarlemanParams(float(w["lambda"]), float(w["mu"]), eta, float(self.raw["tree"]["T"]), direction)

    def rho(self, direction=None):
        return rho_process(self.carleman(direction), self.tree())

    def spatial_datum(self, spec, rng=None) -> np.ndarray:
        sp = self.grid()
        kind = spec.get("kind", "zero")
        amp = float(spec.get("amplitude", 1.0))
        if kind == "zero":
            return np.zeros(sp.N)
        if kind == "eigenmode":
            v = sp.eigenvector(int(spec.get("n", 1)))
            return amp * v / np.max(np.abs(v))
        if kind == "random":
            return amp * (rng or self.rng(1)).standard_normal(sp.N)
        raise ConfigError(f"unknown datum kind {kind!r}", [kind])

    def y0(self) -> np.ndarray:
        return self.spatial_datum(self.raw["data"]["y0"], self.rng(1))

    def yT(self) -> np.ndarray:
        """Terminal datum on all 2**K terminal nodes (random kind draws per node)."""
        tree, sp = self.tree(), self.grid()
        spec = self.raw["data"]["yT"]
        if spec.get("kind") == "random":
            return float(spec.get("amplitude", 1.0)) * self.rng(2).standard_normal((2**tree.K, sp.N))
        return np.tile(self.spatial_datum(spec), (2**tree.K, 1))

    def follower_targets(self, rng=None, direction=None):
        """(targets, targets_Y) for each follower from the target generator."""
        spec = self.raw["targets"]
        kind = spec["kind"]
        tree, sp = self.tree(), self.grid()
        m = len(self.raw["followers"])
        if kind == "zero":
            return None, None
        amp = float(spec.get("amplitude", 1.0))
        rng = rng or self.rng(3)
        scale = None
        if spec.get("scale_by_rho", True):
            scale = self.rho(direction).values[: tree.n_running, None]

        def one():
            f = AdaptedField(tree, sp)
            if kind == "eigenmode":
                f.running[:] = amp * sp.eigenvector(int(spec.get("n", 1)))
            elif kind == "random":
                f.running[:] = amp * rng.standard_normal(f.running.shape)
            else:
                raise ConfigError(f"unknown target kind {kind!r}", [kind])
            if scale is not None:
                f.running[:] /= scale
            return f

        return [one() for _ in range(m)], [one() for _ in range(m)]


def _expression_coefficient(tree, sp, expr: str) -> Coefficient:
    """Per-node coefficient from an expression in x, t and W (Brownian value at the node)."""
    lv = tree.row_levels()
    t = tree.dt * lv
    W = np.zeros(tree.n_nodes)
    for k in range(tree.K):
        r, n = tree.rows(k), tree.rows(k + 1)
        Wn = W[n]
        Wn[0::2] = W[r] + tree.sqdt
        Wn[1::2] = W[r] - tree.sqdt
        W[n] = Wn
    names = {k: getattr(np, k) for k in ("sin", "cos", "exp", "abs", "sqrt", "tanh", "pi", "minimum", "maximum", "where")}
    names.update(x=sp.x[None, :], t=t[:, None], W=W[:, None])
    val = eval(compile(expr, "<coefficient>", "eval"), {"__builtins__": {}}, names)  # noqa: S307
    data = np.broadcast_to(np.asarray(val, dtype=float), (tree.n_nodes, sp.N)).copy()
    data[tree.rows(tree.K)] = 0.0
    return Coefficient(AdaptedField(tree, sp, data))


def _range_ok(r, N):
    return isinstance(r, (list, tuple)) and len(r) == 2 and all(isinstance(v, int) for v in r) and 1 <= r[0] <= r[1] <= N


def validate(raw: dict) -> list:
    """Every invariant violation, as human-readable strings."""
    v = []
    N = raw["grid"].get("N")
    if not isinstance(N, int) or N < 3:
        v.append("grid.N must be an integer >= 3")
        N = 3
    if not raw["grid"].get("L", 0) > 0:
        v.append("grid.L must be positive")
    K = raw["tree"].get("K")
    if not isinstance(K, int) or not 1 <= K <= 24:
        v.append("tree.K must be an integer in [1, 24]")
    if not raw["tree"].get("T", 0) > 0:
        v.append("tree.T must be positive")

    def check_range(name, r, allow_whole=False, allow_none=False):
        if r is None and allow_none:
            return
        if r == "whole" and allow_whole:
            return
        if not _range_ok(r, N):
            v.append(f"{name} must be an index range [lo, hi] with 1 <= lo <= hi <= {N}")

    check_range("control_region", raw["control_region"], allow_whole=True)
    if not raw["followers"]:
        v.append("at least one follower is required")
    for i, f in enumerate(raw["followers"]):
        check_range(f"followers[{i}].control", f.get("control"), allow_whole=True)
        check_range(f"followers[{i}].observe", f.get("observe"), allow_whole=True)
        check_range(f"followers[{i}].observe_Y", f.get("observe_Y"), allow_whole=True, allow_none=True)
        if not f.get("beta", 0) >= 1:
            v.append(f"followers[{i}].beta must be >= 1")
        if not (f.get("alpha", -1) >= 0 and f.get("alpha_Y", -1) >= 0):
            v.append(f"followers[{i}] mismatch weights must be nonnegative")
    goal = raw["goal"]
    if goal.get("direction") not in (FORWARD, BACKWARD):
        v.append("goal.direction must be 'forward' or 'backward'")
    if raw.get("experiments", {}).get("observability_system", BACKWARD) not in (FORWARD, BACKWARD):
        v.append("experiments.observability_system must be 'forward' or 'backward'")
    if goal.get("type") not in CONTROL_GOALS:
        v.append(f"goal.type must be one of {CONTROL_GOALS}")
    if goal.get("type") in ("null", "approximate") and not (isinstance(goal.get("epsilon"), (int, float)) and goal["epsilon"] > 0):
        v.append("goal.epsilon must be > 0 for null and approximate goals")
    # observation region must meet the leader's control region
    if not v:
        sp = SpatialGrid(float(raw["grid"]["L"]), N)
        G0 = whole_mask(sp) if raw["control_region"] == "whole" else make_mask(sp, raw["control_region"])
        for i, f in enumerate(raw["followers"]):
            O = whole_mask(sp) if f["observe"] == "whole" else make_mask(sp, f["observe"])
            if not np.any(O * G0):
                v.append(f"followers[{i}].observe must intersect control_region (observation region O_d meets G0)")
    w = raw["weights"]
    if not (w.get("lambda", 0) >= 1 and w.get("mu", 0) >= 1):
        v.append("weights.lambda and weights.mu must be >= 1")
    if not w.get("eta_height", 0) > 0:
        v.append("weights.eta_height must be positive")
    if w.get("critical") is not None:
        check_range("weights.critical", w["critical"])
    c = raw["coefficients"]
    for name in ("a1", "a2"):
        if not isinstance(c.get(name), (int, float, list, str)):
            v.append(f"coefficients.{name} must be a number, a per-level list or an expression")
    if not v and isinstance(c["a1"], (int, float)):
        dt = raw["tree"]["T"] / raw["tree"]["K"]
        if dt * abs(c["a1"]) >= 1:
            v.append("stability guard dt*|a1| < 1 violated")
    if raw["solver"].get("hum_method") not in ("lanczos", "apg"):
        v.append("solver.hum_method must be 'lanczos' or 'apg'")
    if not isinstance(raw.get("seed"), int):
        v.append("seed must be an integer")
    return v


def _normalize(data: dict) -> dict:
    raw = _merge(DEFAULTS, data)
    raw["followers"] = [_merge(FOLLOWER_DEFAULTS, f) for f in raw["followers"] or []]
    if "type" in raw["goal"] and raw["goal"]["type"] is None:
        raw["goal"]["type"] = "null"  # unquoted YAML null
    for f in raw["followers"]:
        for key in ("control", "observe", "observe_Y"):
            if isinstance(f.get(key), tuple):
                f[key] = list(f[key])
    return json.loads(json.dumps(raw, default=float))


def from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping", ["top level is not a mapping"])
    data = _coerce_numbers(data)  # YAML 1.1 reads 1e-2 as a string
    raw = _normalize(data)
    viol = validate(raw)
    if viol:
        raise ConfigError("invalid scenario:\n  - " + "\n  - ".join(viol), viol)
    return Scenario(raw)


def _coerce_numbers(obj):
    if isinstance(obj, dict):
        return {k: _coerce_numbers(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_coerce_numbers(v) for v in obj]
    if isinstance(obj, str):
        try:
            return float(obj)
        except ValueError:
            return obj
    return obj


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}", [str(exc)]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"cannot parse {path}{where}: {getattr(exc, 'problem', exc)}", [str(exc)]) from exc
    return from_dict(data or {})


def default_scenario_path() -> Path:
    return Path(__file__).with_name("default_scenario.yaml")
