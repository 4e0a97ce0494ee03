"""JSON scenario files.

A file looks like::

    {
      "schema_version": 1,
      "T": 1.0, "N": 256,
      "terminal": {"name": "linear", "params": {"a": 1.0}},
      "barrier": {"constant": -20},
      "generator": {"name": "fquad", "params": {"A": 1.0}},
      "transforms": [{"kind": "truncate", "C": 4.0}],
      "scheme": {"y_evaluation": "implicit"},
      "tolerances": {"identity": 1e-10, "oracle_gap": 0.05},
      "output": {"n_paths": 5}
    }

Errors carry the JSON path of the offending field (``generator.params.A``) or
the line and column of a syntax error.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import RBSDEError
from .generators import (
    CATALOG,
    CLASSES,
    Generator,
    Scenario,
    barrier_shift,
    clip,
    exp_quadratic_transform,
    lipschitz_approx,
    make_scenario,
    monotone_shift,
    truncate,
)
from .lattice import build_lattice
from .solver import SchemeOptions

SCHEMA_VERSION = 1

DEFAULT_TOLERANCES = {
    "identity": 1e-10,
    "skorokhod": 1e-12,
    "oracle_gap": 0.05,
    "comparison": 1e-10,
    "sweep": 1e-10,
}
DEFAULT_OUTPUT = {"n_paths": 5, "c_beta": 1.0}
DEFAULT_SCHEME = {"y_evaluation": "implicit", "root_tol": 1e-12, "max_root_iters": 200, "contraction_guard": True}


class ConfigError(RBSDEError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# ---------------------------------------------------------------- state functions

# name -> (required params, defaults, builder returning fn(x))
_STATE_FUNCS: dict[str, tuple[tuple[str, ...], dict, Callable]] = {
    "constant": (("c",), {}, lambda p: lambda x: np.full_like(np.asarray(x, dtype=float), p["c"])),
    "linear": ((), {"a": 1.0, "c": 0.0}, lambda p: lambda x: p["a"] * np.asarray(x, dtype=float) + p["c"]),
    "tanh": (
        (),
        {"amp": 1.0, "scale": 1.0, "c": 0.0},
        lambda p: lambda x: p["amp"] * np.tanh(p["scale"] * np.asarray(x, dtype=float)) + p["c"],
    ),
    "square": ((), {"a": 1.0, "c": 0.0}, lambda p: lambda x: p["a"] * np.asarray(x, dtype=float) ** 2 + p["c"]),
    "put": ((), {"K": 0.0}, lambda p: lambda x: np.maximum(p["K"] - np.asarray(x, dtype=float), 0.0)),
    "call": ((), {"K": 0.0}, lambda p: lambda x: np.maximum(np.asarray(x, dtype=float) - p["K"], 0.0)),
    "clamped_linear": (
        ("lo", "hi"),
        {"a": 1.0, "c": 0.0},
        lambda p: lambda x: np.clip(p["a"] * np.asarray(x, dtype=float) + p["c"], p["lo"], p["hi"]),
    ),
}

_GEN_PARAMS = {
    "f0": {},
    "fmono": {"c0": 0.0, "beta": 1.0},
    "fquad": {"A": 1.0, "c0": 0.0},
    "fdrift": {"mu": None, "c0": 0.0},
}

_METADATA_KEYS = ("assumption_class", "mu", "phi", "quad_coeff", "lin_coeff", "g_bound", "lipschitz_z")

_TRANSFORMS = {
    "truncate": {"C": None},
    "lipschitz": {"n": None, "q_radius": "opt", "q_step": "opt", "half_points": 512},
    "monotone_shift": {"lambda": None, "exact_discrete": False},
    "clip": {"m": None, "p": None},
    "barrier_shift": {"b": "opt"},
    "exp_quadratic": {"A": None},
}


def _obj(v: Any, path: str) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(path, f"expected an object, got {type(v).__name__}")
    return v


def _num(v: Any, path: str, *, positive: bool = False, integer: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and not (isinstance(v, int) or float(v).is_integer()):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _no_extra(d: dict, allowed, path: str) -> None:
    extra = sorted(set(d) - set(allowed))
    if extra:
        where = f"{path}.{extra[0]}" if path else extra[0]
        raise ConfigError(where, f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _params(d: dict, spec: dict, path: str, required: tuple = ()) -> dict:
    """Fill defaults; ``None`` marks a required key, ``"opt"`` an optional one."""
    _no_extra(d, set(spec) | set(required), path)
    out = {}
    for k in (*required, *spec):
        p = f"{path}.{k}"
        if k in d:
            default = spec.get(k)
            out[k] = d[k] if isinstance(default, bool) else _num(d[k], p)
            if isinstance(default, bool) and not isinstance(d[k], bool):
                raise ConfigError(p, "expected true or false")
        elif k in required or spec.get(k) is None:
            raise ConfigError(p, "missing required field")
        elif spec[k] != "opt":
            out[k] = spec[k]
    return out


def _state_spec(d: Any, path: str) -> dict:
    d = _obj(d, path)
    _no_extra(d, ("name", "params"), path)
    if "name" not in d:
        raise ConfigError(f"{path}.name", "missing required field")
    name = d["name"]
    if name not in _STATE_FUNCS:
        raise ConfigError(f"{path}.name", f"unknown function {name!r} (known: {', '.join(sorted(_STATE_FUNCS))})")
    req, defaults, _ = _STATE_FUNCS[name]
    return {"name": name, "params": _params(_obj(d.get("params", {}), f"{path}.params"), defaults, f"{path}.params", req)}


def _build_state(spec: dict) -> Callable:
    return _STATE_FUNCS[spec["name"]][2](spec["params"])


def _phi_spec(v: Any, path: str) -> dict:
    d = _obj(v, path)
    return _params(d, {"offset": 0.0, "coeff": 0.0, "power": 1.0}, path)


def _gen_spec(d: Any, path: str) -> dict:
    d = _obj(d, path)
    _no_extra(d, ("name", "params", "metadata"), path)
    if "name" not in d:
        raise ConfigError(f"{path}.name", "missing required field")
    name = d["name"]
    if name not in CATALOG:
        raise ConfigError(f"{path}.name", f"unknown generator {name!r} (known: {', '.join(sorted(CATALOG))})")
    params = _params(_obj(d.get("params", {}), f"{path}.params"), _GEN_PARAMS[name], f"{path}.params")
    meta_in = _obj(d.get("metadata", {}), f"{path}.metadata")
    _no_extra(meta_in, _METADATA_KEYS, f"{path}.metadata")
    meta = {}
    for k, v in meta_in.items():
        p = f"{path}.metadata.{k}"
        if k == "assumption_class":
            if v not in CLASSES:
                raise ConfigError(p, f"unknown class {v!r} (known: {', '.join(CLASSES)})")
            meta[k] = v
        elif k == "phi":
            meta[k] = _phi_spec(v, p)
        else:
            meta[k] = _num(v, p)
    return {"name": name, "params": params, "metadata": meta}


def _build_generator(spec: dict) -> Generator:
    name, params = spec["name"], spec["params"]
    try:
        gen = CATALOG[name](**params)
    except ValueError as exc:
        raise ConfigError("generator.params", str(exc)) from exc
    meta = dict(spec["metadata"])
    if "phi" in meta:
        ph = meta.pop("phi")
        meta["phi"] = lambda r, o=ph["offset"], c=ph["coeff"], q=ph["power"]: o + c * np.abs(np.asarray(r, dtype=float)) ** q
    return replace(gen, **meta) if meta else gen


def _barrier_spec(d: Any, path: str) -> dict:
    d = _obj(d, path)
    if "constant" in d:
        _no_extra(d, ("constant",), path)
        return {"constant": _num(d["constant"], f"{path}.constant")}
    if "function" in d:
        _no_extra(d, ("function", "time_coeff"), path)
        out = {"function": _state_spec(d["function"], f"{path}.function")}
        out["time_coeff"] = _num(d.get("time_coeff", 0.0), f"{path}.time_coeff")
        return out
    raise ConfigError(path, "expected {\"constant\": c} or {\"function\": {...}}")


def _transform_spec(d: Any, path: str) -> dict:
    d = _obj(d, path)
    kind = d.get("kind")
    if kind not in _TRANSFORMS:
        raise ConfigError(f"{path}.kind", f"unknown transform {kind!r} (known: {', '.join(_TRANSFORMS)})")
    rest = {k: v for k, v in d.items() if k != "kind"}
    return {"kind": kind, **_params(rest, _TRANSFORMS[kind], path)}


def _section(raw: dict, key: str, defaults: dict) -> dict:
    d = _obj(raw.get(key, {}), key)
    _no_extra(d, defaults, key)
    out = dict(defaults)
    for k, v in d.items():
        dv = defaults[k]
        p = f"{key}.{k}"
        if isinstance(dv, bool):
            if not isinstance(v, bool):
                raise ConfigError(p, "expected true or false")
            out[k] = v
        elif isinstance(dv, str):
            if not isinstance(v, str):
                raise ConfigError(p, "expected a string")
            out[k] = v
        elif isinstance(dv, int):
            out[k] = _num(v, p, integer=True)
        else:
            out[k] = _num(v, p)
            if out[k] < 0:
                raise ConfigError(p, "must be nonnegative")
    return out


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ScenarioConfig:
    """Normalised scenario file; every default is filled in."""

    data: dict

    @property
    def T(self) -> float:
        return self.data["T"]

    @property
    def N(self) -> int:
        return self.data["N"]

    @property
    def tolerances(self) -> dict:
        return self.data["tolerances"]

    @property
    def output(self) -> dict:
        return self.data["output"]

    def scheme(self, mode: str | None = None) -> SchemeOptions:
        s = dict(self.data["scheme"])
        if mode is not None:
            s["y_evaluation"] = mode
        try:
            return SchemeOptions(**s)
        except ValueError as exc:
            raise ConfigError("scheme", str(exc)) from exc

    def semantic(self) -> dict:
        """Everything that affects results; labels and output options are excluded."""
        return {k: v for k, v in self.data.items() if k not in ("label", "output")}

    def hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(blob.encode()).hexdigest()

    def base_scenario(self) -> Scenario:
        """The scenario before the transform pipeline."""
        d = self.data
        lat = build_lattice(d["T"], d["N"])
        term = _build_state(d["terminal"])
        b = d["barrier"]
        if "constant" in b:
            barrier = b["constant"]
        else:
            fn, tc = _build_state(b["function"]), b["time_coeff"]
            barrier = lambda t, x: fn(x) + tc * t  # noqa: E731
        return make_scenario(lat, term, _build_generator(d["generator"]), barrier, d.get("label", ""))

    def build(self) -> Scenario:
        sc = self.base_scenario()
        for k, t in enumerate(self.data["transforms"]):
            try:
                sc = apply_transform(sc, t)
            except ValueError as exc:
                raise ConfigError(f"transforms[{k}]", str(exc)) from exc
        return sc


def apply_transform(sc: Scenario, t: dict) -> Scenario:
    kind = t["kind"]
    if kind == "truncate":
        return replace(sc, generator=truncate(sc.generator, t["C"]))
    if kind == "lipschitz":
        kw = {k: t[k] for k in ("q_radius", "q_step") if k in t}
        return replace(sc, generator=lipschitz_approx(sc.generator, t["n"], half_points=int(t["half_points"]), **kw))
    if kind == "monotone_shift":
        return monotone_shift(sc, t["lambda"], exact_discrete=t["exact_discrete"])
    if kind == "clip":
        return clip(sc, t["m"], t["p"])
    if kind == "barrier_shift":
        return barrier_shift(sc, t.get("b"))
    return exp_quadratic_transform(sc, t["A"])


def parse_config(raw: Any) -> ScenarioConfig:
    raw = _obj(copy.deepcopy(raw), "")
    allowed = (
        "schema_version", "label", "T", "N", "terminal", "barrier", "generator",
        "transforms", "scheme", "tolerances", "output",
    )  # fmt: skip
    _no_extra(raw, allowed, "")
    for k in ("schema_version", "T", "N", "terminal", "generator"):
        if k not in raw:
            raise ConfigError(k, "missing required field")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {raw['schema_version']!r} (expected {SCHEMA_VERSION})")
    d: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    if "label" in raw:
        if not isinstance(raw["label"], str):
            raise ConfigError("label", "expected a string")
        d["label"] = raw["label"]
    d["T"] = _num(raw["T"], "T", positive=True)
    d["N"] = _num(raw["N"], "N", positive=True, integer=True)
    d["terminal"] = _state_spec(raw["terminal"], "terminal")
    d["barrier"] = _barrier_spec(raw.get("barrier", {"constant": -1e9}), "barrier")
    d["generator"] = _gen_spec(raw["generator"], "generator")
    tr = raw.get("transforms", [])
    if not isinstance(tr, list):
        raise ConfigError("transforms", "expected a list")
    d["transforms"] = [_transform_spec(t, f"transforms[{k}]") for k, t in enumerate(tr)]
    d["scheme"] = _section(raw, "scheme", DEFAULT_SCHEME)
    d["tolerances"] = _section(raw, "tolerances", DEFAULT_TOLERANCES)
    d["output"] = _section(raw, "output", DEFAULT_OUTPUT)
    cfg = ScenarioConfig(d)
    cfg.scheme()  # validate now so that errors carry the section name
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {p}: {exc.strerror or exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{p}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)
