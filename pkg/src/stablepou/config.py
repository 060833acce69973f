"""Experiment configuration: JSON in, validated :class:`ExperimentConfig` out.

Every problem with a field raises :class:`ConfigError` naming the field (as a
dotted path) and the violated constraint.  Unknown keys are rejected.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigError
from .model import ModelSpec, example_1d, example_2d
from .noise import NoiseKind
from .scheme import AlphaHarmonic, Explicit, HarmonicOffset

__all__ = ["Experiment", "ExperimentConfig", "load_config", "parse_config", "config_hash"]


class Experiment(str, Enum):
    CHECK_MODEL = "CheckModel"
    W1_CURVE = "W1Curve"
    OU_OPTIMALITY = "OuOptimality"
    CLT_CHECK = "CltCheck"
    SINKHORN_SELFTEST = "SinkhornSelftest"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    model: ModelSpec = field(default_factory=example_1d)
    schedule: object = field(default_factory=HarmonicOffset)
    n_steps: int = 1000
    n_trajectories: int = 2000
    n_repeats: int = 20
    reference_multiplier: int = 2
    tau: float = 20.0
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    # optional knobs
    x0: tuple = None
    reference_grid: tuple = (-20.0, 20.0)
    rerandomize_reference: bool = True
    checkpoint_every: int = 10
    test_function: str = "indicator"
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 10_000
    alphas: tuple = (1.25, 1.5, 1.75, 2.0)
    ou_n_min: int = 100
    ou_n_max: int = 5000
    ou_n_step: int = 100
    quad_points: int = 64
    selftest_instances: int = 50
    selftest_max_atoms: int = 6
    raw: dict = field(default=None, compare=False, repr=False)

    @property
    def initial_state(self):
        if self.x0 is None:
            return np.zeros(self.model.d)
        return np.array(self.x0, dtype=float)

    def with_overrides(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        raw = dict(self.raw or {})
        raw.update(changes)
        return replace(self, raw=raw, **changes)


_SCALARS = {
    # name: (kind, constraint check, constraint text)
    "n_steps": ("int", lambda x: x >= 1, ">= 1"),
    "n_trajectories": ("int", lambda x: x >= 1, ">= 1"),
    "n_repeats": ("int", lambda x: x >= 1, ">= 1"),
    "reference_multiplier": ("int", lambda x: x >= 1, ">= 1"),
    "tau": ("float", lambda x: x > 0, "> 0"),
    "master_seed": ("int", lambda x: 0 <= x < 2 ** 64, "an unsigned 64-bit integer"),
    "workers": ("int", lambda x: x >= 1, ">= 1"),
    "checkpoint_every": ("int", lambda x: x >= 1, ">= 1"),
    "sinkhorn_tol": ("float", lambda x: x > 0, "> 0"),
    "sinkhorn_max_iter": ("int", lambda x: x >= 1, ">= 1"),
    "ou_n_min": ("int", lambda x: x >= 10, ">= 10"),
    "ou_n_max": ("int", lambda x: x >= 10, ">= 10"),
    "ou_n_step": ("int", lambda x: x >= 1, ">= 1"),
    "quad_points": ("int", lambda x: 2 <= x <= 4096, "in [2, 4096]"),
    "selftest_instances": ("int", lambda x: x >= 1, ">= 1"),
    "selftest_max_atoms": ("int", lambda x: 1 <= x <= 8, "in [1, 8]"),
}


def _int(name, x):
    if isinstance(x, bool) or not isinstance(x, int):
        if isinstance(x, float) and x.is_integer():
            return int(x)
        raise ConfigError(name, f"must be an integer, got {x!r}")
    return x


def _float(name, x):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(name, f"must be a number, got {x!r}")
    x = float(x)
    if not math.isfinite(x):
        raise ConfigError(name, "must be finite")
    return x


def _scalar(name, x):
    kind, ok, text = _SCALARS[name]
    x = _int(name, x) if kind == "int" else _float(name, x)
    if not ok(x):
        raise ConfigError(name, f"must be {text}, got {x!r}")
    return x


def _vector(name, x, length=None):
    if not isinstance(x, list) or not x:
        raise ConfigError(name, "must be a nonempty array of numbers")
    out = [_float(f"{name}[{i}]", v) for i, v in enumerate(x)]
    if length is not None and len(out) != length:
        raise ConfigError(name, f"must have length {length}, got {len(out)}")
    return out


def _matrix(name, x, d):
    if not isinstance(x, list) or len(x) != d:
        raise ConfigError(name, f"must be a {d}x{d} nested array")
    return [_vector(f"{name}[{i}]", row, d) for i, row in enumerate(x)]


_MODEL_KEYS = {"d", "ell", "M", "Gamma", "v", "sigma", "alpha", "noise_kind"}
_PRESETS = {"example_1d": example_1d, "example_2d": example_2d}


def _parse_model(obj):
    if not isinstance(obj, dict):
        raise ConfigError("model", "must be an object")
    if "preset" in obj:
        extra = set(obj) - {"preset", "alpha"}
        if extra:
            raise ConfigError(f"model.{sorted(extra)[0]}", "unknown key for a preset model")
        name = obj["preset"]
        if name not in _PRESETS:
            raise ConfigError("model.preset", f"must be one of {sorted(_PRESETS)}, got {name!r}")
        kwargs = {}
        if "alpha" in obj:
            kwargs["alpha"] = _float("model.alpha", obj["alpha"])
        try:
            return _PRESETS[name](**kwargs)
        except ValueError as exc:
            raise ConfigError("model.alpha", str(exc)) from None
    unknown = set(obj) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"model.{sorted(unknown)[0]}", "unknown key")
    missing = sorted(_MODEL_KEYS - {"noise_kind"} - set(obj))
    if missing:
        raise ConfigError(f"model.{missing[0]}", "required")
    d = _int("model.d", obj["d"])
    if d < 1:
        raise ConfigError("model.d", "must be >= 1")
    gamma = obj["Gamma"]
    if isinstance(gamma, list) and gamma and isinstance(gamma[0], list):
        g = np.array(_matrix("model.Gamma", gamma, d))
        if np.any(g != np.diag(np.diag(g))):
            raise ConfigError("model.Gamma", "must be diagonal")
        gamma = list(np.diag(g))
    else:
        gamma = _vector("model.Gamma", gamma, d)
    kind = obj.get("noise_kind", NoiseKind.CYLINDRICAL.value)
    try:
        kind = NoiseKind(kind)
    except ValueError:
        raise ConfigError("model.noise_kind",
                          f"must be one of {[k.value for k in NoiseKind]}, got {kind!r}") from None
    fields = dict(
        d=d,
        ell=_vector("model.ell", obj["ell"], d),
        M=_matrix("model.M", obj["M"], d),
        Gamma=gamma,
        v=_vector("model.v", obj["v"], d),
        sigma=_matrix("model.sigma", obj["sigma"], d),
        alpha=_float("model.alpha", obj["alpha"]),
        noise_kind=kind,
    )
    try:
        return ModelSpec(**fields)
    except ValueError as exc:
        msg = str(exc)
        # ModelSpec messages start with the offending field name
        head = msg.split(":", 1)[0].split()[0] if msg else ""
        name = f"model.{head}" if head in _MODEL_KEYS else "model"
        raise ConfigError(name, msg) from None


def _parse_schedule(obj):
    if not isinstance(obj, dict):
        raise ConfigError("schedule", "must be an object")
    fam = obj.get("family")
    allowed = {"HarmonicOffset": {"c0", "beta"}, "AlphaHarmonic": {"alpha", "beta"},
               "Explicit": {"values", "beta"}}
    if fam not in allowed:
        raise ConfigError("schedule.family", f"must be one of {sorted(allowed)}, got {fam!r}")
    unknown = set(obj) - allowed[fam] - {"family"}
    if unknown:
        raise ConfigError(f"schedule.{sorted(unknown)[0]}", f"unknown key for {fam}")
    kwargs = {}
    if "beta" in obj:
        kwargs["beta"] = _float("schedule.beta", obj["beta"])
    try:
        if fam == "HarmonicOffset":
            c0 = _float("schedule.c0", obj.get("c0", 10.0))
            return HarmonicOffset(c0, **kwargs)
        if fam == "AlphaHarmonic":
            if "alpha" not in obj:
                raise ConfigError("schedule.alpha", "required")
            return AlphaHarmonic(_float("schedule.alpha", obj["alpha"]), **kwargs)
        if "values" not in obj:
            raise ConfigError("schedule.values", "required")
        return Explicit(_vector("schedule.values", obj["values"]), **kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("schedule", str(exc)) from None


def parse_config(obj):
    """Validate a decoded JSON object into an :class:`ExperimentConfig`."""
    if not isinstance(obj, dict):
        raise ConfigError("<root>", "must be a JSON object")
    names = set(ExperimentConfig.__dataclass_fields__) - {"raw"}
    unknown = set(obj) - names
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    if "experiment" not in obj:
        raise ConfigError("experiment", "required")
    try:
        exp = Experiment(obj["experiment"])
    except ValueError:
        raise ConfigError("experiment",
                          f"must be one of {[e.value for e in Experiment]}, "
                          f"got {obj['experiment']!r}") from None
    kw = {"experiment": exp, "raw": json.loads(json.dumps(obj))}
    if "model" in obj:
        kw["model"] = _parse_model(obj["model"])
    if "schedule" in obj:
        kw["schedule"] = _parse_schedule(obj["schedule"])
    for name in _SCALARS:
        if name in obj:
            kw[name] = _scalar(name, obj[name])
    if "output_dir" in obj:
        if not isinstance(obj["output_dir"], str) or not obj["output_dir"]:
            raise ConfigError("output_dir", "must be a nonempty string")
        kw["output_dir"] = obj["output_dir"]
    if "rerandomize_reference" in obj:
        if not isinstance(obj["rerandomize_reference"], bool):
            raise ConfigError("rerandomize_reference", "must be true or false")
        kw["rerandomize_reference"] = obj["rerandomize_reference"]
    if "test_function" in obj:
        from .analysis import TEST_FUNCTIONS
        if obj["test_function"] not in TEST_FUNCTIONS:
            raise ConfigError("test_function", f"must be one of {sorted(TEST_FUNCTIONS)}")
        kw["test_function"] = obj["test_function"]
    if "reference_grid" in obj:
        lo, hi = _vector("reference_grid", obj["reference_grid"], 2)
        if not lo < hi:
            raise ConfigError("reference_grid", "needs lo < hi")
        kw["reference_grid"] = (lo, hi)
    if "alphas" in obj:
        al = _vector("alphas", obj["alphas"])
        for i, a in enumerate(al):
            if not 1.0 < a <= 2.0:
                raise ConfigError(f"alphas[{i}]", "must lie in (1, 2]")
        kw["alphas"] = tuple(al)
    cfg = ExperimentConfig(**kw)
    if "x0" in obj:
        x0 = _vector("x0", obj["x0"], cfg.model.d)
        cfg = replace(cfg, x0=tuple(x0))
    if cfg.ou_n_max < cfg.ou_n_min:
        raise ConfigError("ou_n_max", "must be >= ou_n_min")
    return cfg


def load_config(path):
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(obj)


def config_hash(cfg):
    """SHA-256 of the canonical config, ignoring where and how wide it runs."""
    raw = dict(cfg.raw or {})
    raw.pop("output_dir", None)
    raw.pop("workers", None)
    raw["experiment"] = cfg.experiment.value
    raw["master_seed"] = cfg.master_seed
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
