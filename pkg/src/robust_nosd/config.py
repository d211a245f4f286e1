"""Run configuration: JSON schema for plans and counts, presets, overrides.

The data layout is::

    {"plan": {"groups": [{"g": 69, "s": 1.0, "tau": [2, 10, 30]}, ...]},
     "counts": {"n": [[[7, 1], [26, 0], [28, 2]], ...], "k": [5, 7, 7]}}

with ``n[i][l] = [cause 1, cause 2]`` failures in interval ``l`` of group
``i`` and ``k[i]`` survivors.  Everything else in a config file is optional.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .bayes import PriorSpec
from .data import FIXTURES, PRESETS, DataError, FailureCounts, contaminate, simulate_counts
from .hmc import HmcConfig
from .model import ModelParams, TestPlan
from .testing import HypothesisSpec

DEFAULT_GAMMAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_TUNING_GRID = tuple(round(0.1 + 0.05 * j, 2) for j in range(19))

TOP_LEVEL_KEYS = {
    "plan", "counts", "preset", "fixture", "truth", "contaminated", "seed", "gamma", "init", "prior",
    "hmc", "hypothesis", "n_boot", "level", "tuning", "influence", "save_chains",
    "simulation_version",  # informational, written by simulate
}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}" if path else msg)


def _number(v, path, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(path, f"expected a finite number, got {v!r}")
    if positive and not v > 0:
        _fail(path, f"must be positive, got {v!r}")
    if nonneg and v < 0:
        _fail(path, f"must be nonnegative, got {v!r}")
    return float(v)


def _integer(v, path, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            _fail(path, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        _fail(path, f"must be at least {minimum}, got {v}")
    return int(v)


def _list(v, path, length=None):
    if not isinstance(v, list):
        _fail(path, f"expected a list, got {type(v).__name__}")
    if length is not None and len(v) != length:
        _fail(path, f"expected {length} entries, got {len(v)}")
    return v


def _object(v, path, allowed):
    if not isinstance(v, dict):
        _fail(path, f"expected an object, got {type(v).__name__}")
    extra = sorted(set(v) - set(allowed))
    if extra:
        _fail(path, f"unknown key(s) {extra}; allowed: {sorted(allowed)}")
    return v


def _params(v, path) -> ModelParams:
    return ModelParams(*(_number(x, f"{path}[{j}]") for j, x in enumerate(_list(v, path, 4))))


# ----------------------------------------------------------------------
# plan / counts <-> JSON
# ----------------------------------------------------------------------

def plan_from_json(obj, path="plan") -> TestPlan:
    groups = _list(_object(obj, path, {"groups"}).get("groups"), f"{path}.groups")
    if not groups:
        _fail(f"{path}.groups", "at least one group is required")
    g, s, tau = [], [], []
    for i, grp in enumerate(groups):
        p = f"{path}.groups[{i}]"
        _object(grp, p, {"g", "s", "tau"})
        for key in ("g", "s", "tau"):
            if key not in grp:
                _fail(p, f"missing key {key!r}")
        g.append(_integer(grp["g"], f"{p}.g", minimum=1))
        s.append(_number(grp["s"], f"{p}.s"))
        t = [_number(x, f"{p}.tau[{j}]") for j, x in enumerate(_list(grp["tau"], f"{p}.tau"))]
        tau.append(t)
    try:
        return TestPlan.from_arrays(g, s, tau)
    except ValueError as exc:
        _fail(path, str(exc))


def counts_from_json(obj, plan: TestPlan, path="counts") -> FailureCounts:
    _object(obj, path, {"n", "k"})
    for key in ("n", "k"):
        if key not in obj:
            _fail(path, f"missing key {key!r}")
    n = _list(obj["n"], f"{path}.n", plan.I)
    for i, rows in enumerate(n):
        _list(rows, f"{path}.n[{i}]", plan.L)
        for l, pair in enumerate(rows):
            for r, x in enumerate(_list(pair, f"{path}.n[{i}][{l}]", 2)):
                _integer(x, f"{path}.n[{i}][{l}][{r}]", minimum=0)
    k = [_integer(x, f"{path}.k[{i}]", minimum=0) for i, x in enumerate(_list(obj["k"], f"{path}.k", plan.I))]
    counts = FailureCounts(np.array(n, dtype=np.int64), np.array(k, dtype=np.int64))
    try:
        counts.check(plan)
    except DataError as exc:
        _fail(path, str(exc))
    return counts


def plan_to_json(plan: TestPlan) -> dict:
    return {"groups": [{"g": grp.g, "s": grp.s, "tau": list(grp.tau)} for grp in plan.groups]}


def counts_to_json(counts: FailureCounts) -> dict:
    return {"n": counts.n.tolist(), "k": counts.k.tolist()}


# ----------------------------------------------------------------------
# run configuration
# ----------------------------------------------------------------------

@dataclass
class RunConfig:
    plan: TestPlan
    counts: FailureCounts | None = None
    preset: str | None = None
    truth: ModelParams | None = None
    contaminated: bool = False
    seed: int = 0
    gammas: tuple | None = None
    init: ModelParams | None = None
    prior: PriorSpec = field(default_factory=PriorSpec)
    hmc: dict = field(default_factory=dict)
    hypothesis: HypothesisSpec | None = None
    n_boot: int = 500
    level: float = 0.95
    tuning: dict = field(default_factory=dict)
    influence: dict = field(default_factory=dict)
    save_chains: bool = False

    def gamma_list(self, default=DEFAULT_GAMMAS) -> tuple:
        return tuple(default if self.gammas is None else self.gammas)

    def hmc_config(self) -> HmcConfig:
        kw = dict(self.hmc)
        kw.setdefault("seed", self.seed)
        if "mass_diag" in kw:
            kw["mass_diag"] = tuple(kw["mass_diag"])
        scheme = kw.pop("scheme", None)
        try:
            if scheme is not None:
                return HmcConfig.scheme(scheme, **kw)
            return HmcConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"hmc: {exc}") from None

    def generating_params(self) -> ModelParams:
        if self.truth is None:
            raise ConfigError("no generating parameters: give 'truth' or a simulation preset")
        if self.contaminated:
            if self.preset not in PRESETS:
                raise ConfigError("'contaminated' needs a simulation preset")
            return contaminate(self.truth, PRESETS[self.preset]["shifts"])
        return self.truth

    def require_counts(self) -> FailureCounts:
        """Counts from the config, simulated from a preset when absent."""
        if self.counts is None:
            if self.truth is None:
                raise ConfigError("counts: missing; give 'counts', a fixture, or a simulation preset")
            self.counts = simulate_counts(self.generating_params(), self.plan, self.seed)
        return self.counts


def _gamma_list(v, path):
    out = tuple(_number(x, f"{path}[{j}]", nonneg=True) for j, x in enumerate(_list(v, path)))
    if not out:
        _fail(path, "at least one gamma is required")
    return out


def parse_gamma_list(text: str) -> tuple:
    """Comma-separated gammas from the command line."""
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--gamma: cannot parse {text!r} as a comma-separated list of numbers") from None
    return _gamma_list(vals, "--gamma")


def _prior(obj, path):
    _object(obj, path, {"kind", "sigma2_p", "posterior_scale"})
    try:
        return PriorSpec(**obj)
    except (TypeError, ValueError) as exc:
        _fail(path, str(exc))


def _hmc(obj, path):
    names = {f.name for f in fields(HmcConfig)} | {"scheme"}
    _object(obj, path, names)
    return dict(obj)


def _hypothesis(obj, path):
    _object(obj, path, {"lambda0", "radius", "rho0"})
    if "lambda0" not in obj:
        _fail(path, "missing key 'lambda0'")
    kw = {"lambda0": _params(obj["lambda0"], f"{path}.lambda0")}
    if "radius" in obj:
        kw["radius"] = _number(obj["radius"], f"{path}.radius", positive=True)
    if "rho0" in obj:
        kw["rho0"] = obj["rho0"]
    try:
        return HypothesisSpec(**kw)
    except (TypeError, ValueError) as exc:
        _fail(path, str(exc))


def _tuning(obj, path):
    _object(obj, path, {"grid", "C1", "C2"})
    out = {}
    if "grid" in obj:
        out["grid"] = _gamma_list(obj["grid"], f"{path}.grid")
    for key in ("C1", "C2"):
        if key in obj:
            out[key] = _number(obj[key], f"{path}.{key}", nonneg=True)
    return out


def _influence(obj, path):
    _object(obj, path, {"estimators", "n_grid", "t_max", "cause", "group", "params"})
    out = {}
    if "estimators" in obj:
        est = _list(obj["estimators"], f"{path}.estimators")
        bad = [e for e in est if e not in ("wmdpde", "wrbe", "bf")]
        if bad or not est:
            _fail(f"{path}.estimators", f"choose from 'wmdpde', 'wrbe', 'bf'; got {est!r}")
        out["estimators"] = tuple(est)
    if "n_grid" in obj:
        out["n_grid"] = _integer(obj["n_grid"], f"{path}.n_grid", minimum=2)
    if "t_max" in obj:
        out["t_max"] = _number(obj["t_max"], f"{path}.t_max", positive=True)
    if "cause" in obj:
        out["cause"] = _integer(obj["cause"], f"{path}.cause")
        if out["cause"] not in (1, 2):
            _fail(f"{path}.cause", "must be 1 or 2")
    if obj.get("group") is not None:
        out["group"] = _integer(obj["group"], f"{path}.group", minimum=0)
    if "params" in obj:
        out["params"] = _params(obj["params"], f"{path}.params")
    return out


def _source(name):
    if name in PRESETS:
        return PRESETS[name]["plan"], None, PRESETS[name]["params"]
    if name in FIXTURES:
        plan, counts = FIXTURES[name]
        return plan, counts, None
    raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS) + sorted(FIXTURES)}")


def build_config(obj: dict | None = None, preset: str | None = None, seed: int | None = None,
                 gammas: tuple | None = None) -> RunConfig:
    """Validate a parsed config object and apply command-line overrides."""
    obj = {} if obj is None else _object(obj, "", TOP_LEVEL_KEYS)
    preset = preset or obj.get("preset") or obj.get("fixture")
    plan = counts = truth = None
    if preset is not None:
        if not isinstance(preset, str):
            _fail("preset", f"expected a name, got {preset!r}")
        plan, counts, truth = _source(preset)
    if "plan" in obj:
        plan = plan_from_json(obj["plan"])
        counts = None
    if plan is None:
        raise ConfigError("no test plan: give 'plan' in the config or --preset")
    if "counts" in obj:
        counts = counts_from_json(obj["counts"], plan)
    if "truth" in obj:
        truth = _params(obj["truth"], "truth")
    cfg = RunConfig(plan=plan, counts=counts, preset=preset, truth=truth)
    cfg.contaminated = bool(obj.get("contaminated", False))
    cfg.seed = _integer(obj.get("seed", 0), "seed", minimum=0)
    if "gamma" in obj:
        cfg.gammas = _gamma_list(obj["gamma"], "gamma")
    if "init" in obj:
        cfg.init = _params(obj["init"], "init")
    if "prior" in obj:
        cfg.prior = _prior(obj["prior"], "prior")
    if "hmc" in obj:
        cfg.hmc = _hmc(obj["hmc"], "hmc")
    if "hypothesis" in obj:
        cfg.hypothesis = _hypothesis(obj["hypothesis"], "hypothesis")
    if "n_boot" in obj:
        cfg.n_boot = _integer(obj["n_boot"], "n_boot", minimum=100)
    if "level" in obj:
        cfg.level = _number(obj["level"], "level")
        if not 0 < cfg.level < 1:
            _fail("level", "must lie in (0, 1)")
    if "tuning" in obj:
        cfg.tuning = _tuning(obj["tuning"], "tuning")
    if "influence" in obj:
        cfg.influence = _influence(obj["influence"], "influence")
    cfg.save_chains = bool(obj.get("save_chains", False))
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg.seed = seed
    if gammas is not None:
        cfg.gammas = tuple(gammas)
    return cfg


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return build_config(obj, **overrides)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
