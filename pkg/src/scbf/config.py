"""JSON experiment configuration: schema, defaults, field specifications and manifests.

A configuration has the sections ``domain``, ``params``, ``forcing``,
``noise``, ``time``, ``ensemble`` and ``experiment``.  Unknown keys are
rejected.  ``resolve`` fills every default so the manifest written next to
the outputs records every tunable explicitly, and a manifest can be fed
back in as a configuration.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import jsonschema
import numpy as np

from .errors import ConfigurationError
from .integrator import SimulationConfig, beltrami_field
from .noise import JumpModel, MarkDistribution, MarkProfile
from .operators import CBFParameters
from .spectral import (
    SpectralField,
    TorusDomain,
    leray_project,
    load_field,
    norm,
    random_divfree_field,
)

COMMANDS = ("simulate", "verify-operators", "stationary", "stability", "stabilize",
            "ergodicity", "isometry")
MANIFEST_KIND = "scbf-manifest"

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer"}
_PROFILE = {"oneOf": [_NUM, {"type": "object", "additionalProperties": False,
                             "properties": {"scale": _NUM, "offset": _NUM}}]}

FIELD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"enum": ["zero", "atoms", "file", "random", "beltrami", "shear", "stationary"]},
        "atoms": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["k", "re"],
            "properties": {"k": {"type": "array", "items": _INT},
                           "re": {"type": "array", "items": _NUM},
                           "im": {"type": "array", "items": _NUM}}}},
        "path": {"type": "string"},
        "decay": _POS,
        "amplitude": _NUM,
        "seed": {"type": "integer", "minimum": 0},
        "wavenumber": {"type": "integer", "minimum": 1},
        "norm_H": {"type": "number", "minimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "params"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "domain": {"type": "object", "additionalProperties": False, "required": ["dim", "N"],
                   "properties": {"dim": {"enum": [2, 3]},
                                  "N": {"type": "integer", "minimum": 8},
                                  "oversample": {"type": "integer", "minimum": 2},
                                  "kmax": {"type": ["integer", "null"], "minimum": 0}}},
        "params": {"type": "object", "additionalProperties": False,
                   "required": ["mu", "beta", "r"],
                   "properties": {"mu": _POS, "beta": _POS, "r": {"type": "number", "minimum": 3},
                                  "alpha": {"const": 0}}},
        "forcing": FIELD_SCHEMA,
        "noise": {"type": "object", "additionalProperties": False,
                  "properties": {
                      "family": {"enum": ["none", "multiplicative", "stabilizing", "additive"]},
                      "rate": {"type": "number", "minimum": 0},
                      "atoms": {"type": "array", "minItems": 1, "items": {
                          "type": "object", "additionalProperties": False,
                          "required": ["z", "weight"],
                          "properties": {"z": _NUM, "weight": {"type": "number", "minimum": 0}}}},
                      "uniform": {"type": ["object", "null"], "additionalProperties": False,
                                  "required": ["low", "high"],
                                  "properties": {"low": _NUM, "high": _NUM}},
                      "sigma": _PROFILE, "g": _PROFILE, "h": _PROFILE,
                      "anchor": FIELD_SCHEMA,
                      "shape": FIELD_SCHEMA}},
        "time": {"type": "object", "additionalProperties": False,
                 "properties": {"T": _POS, "dt": _POS,
                                "record_every": {"type": "integer", "minimum": 1}}},
        "ensemble": {"type": "object", "additionalProperties": False,
                     "properties": {"paths": {"type": "integer", "minimum": 1},
                                    "seed": {"type": "integer", "minimum": 0},
                                    "chunk_size": {"type": "integer", "minimum": 1}}},
        "experiment": {"type": "object", "additionalProperties": False,
                       "properties": {
                           "kind": {"enum": ["meansquare", "pathwise", "coupling",
                                             "time_average", "tightness", "cross_check",
                                             "mixing"]},
                           "initial": FIELD_SCHEMA,
                           "initial_v": FIELD_SCHEMA,
                           "initial_list": {"type": "array", "minItems": 1,
                                            "items": FIELD_SCHEMA},
                           "cases": {"type": "integer", "minimum": 1},
                           "r_values": {"type": "array", "items": {"type": "number",
                                                                   "minimum": 3}},
                           "oracle": {"enum": [None, "bernoulli"]},
                           "tol": {"type": "number", "minimum": 0},
                           "ledger_tol": {"type": ["number", "null"], "minimum": 0},
                           "h": _POS,
                           "eps": {"type": ["number", "null"]},
                           "slack": {"type": "number", "minimum": 0},
                           "fraction": {"type": "number", "minimum": 0, "maximum": 1},
                           "cap": _POS,
                           "burn_in": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                           "observables": {"type": "array", "items": {"type": "string"}},
                           "n_inits": {"type": "integer", "minimum": 1},
                           "solve_tol": _POS,
                           "refine": {"enum": [None, "newton"]},
                           "decay_tol": {"type": "number", "minimum": 0},
                           "z_max": _POS,
                       }},
    },
}

BASE_DEFAULTS = {
    "command": "simulate",
    "domain": {"oversample": 4, "kmax": None},
    "params": {"alpha": 0},
    "forcing": {"type": "zero"},
    "noise": {"family": "none"},
    "time": {"T": 1.0, "dt": 1e-3, "record_every": 1},
    "ensemble": {"paths": 1, "seed": 0, "chunk_size": 32},
}

NOISE_DEFAULTS = {"rate": 1.0, "atoms": [{"z": 1.0, "weight": 1.0}], "uniform": None}
PROFILE_KEY = {"multiplicative": "sigma", "stabilizing": "g", "additive": "h"}

EXPERIMENT_DEFAULTS = {
    "simulate": {"oracle": None, "tol": 1e-3, "ledger_tol": None},
    "verify-operators": {"cases": 1000, "r_values": [3.0, 3.5, 4.0, 5.0]},
    "stationary": {"n_inits": 4, "solve_tol": 1e-10, "refine": None, "decay_tol": 0.01},
    "stability": {"kind": "meansquare", "tol": 0.1, "h": 0.5, "eps": None, "fraction": 0.95},
    "stabilize": {"slack": 0.1, "fraction": 0.95},
    "ergodicity": {"kind": "cross_check", "tol": 0.05, "burn_in": 0.2, "cap": 1.0,
                   "observables": ["norm_H_sq"]},
    "isometry": {"z_max": 3.0},
}


class SchemaError(ConfigurationError):
    """Schema violation or malformed JSON, carrying the offending line when known."""

    def __init__(self, message, line=None, column=None, path=None):
        super().__init__(message)
        self.line = line
        self.column = column
        self.path = path or []


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _locate(text: str, path, extra_key: Optional[str] = None):
    """Best-effort line/column of the key addressed by ``path`` in the raw JSON text."""
    pos = 0
    keys = [p for p in path if isinstance(p, str)]
    if extra_key is not None:
        keys.append(extra_key)
    for k in keys:
        hit = text.find(json.dumps(k), pos)
        if hit < 0:
            break
        pos = hit
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def validate(data: Any, text: Optional[str] = None) -> None:
    """Raise ``SchemaError`` on the first schema violation (deepest path first)."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (-len(e.absolute_path), e.message))
    if not errors:
        return
    err = errors[0]
    path = list(err.absolute_path)
    extra = None
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        unknown = sorted(k for k in err.instance if k not in allowed)
        if unknown:
            extra = unknown[0]
            msg = f"unknown key {extra!r} at /{'/'.join(map(str, path))}"
        else:
            msg = err.message
    else:
        msg = f"{err.message} at /{'/'.join(map(str, path))}"
    line = col = None
    if text is not None:
        line, col = _locate(text, path, extra)
        msg = f"line {line}: {msg}"
    raise SchemaError(msg, line, col, path + ([extra] if extra else []))


def load_json(path) -> tuple:
    """Read a JSON file, returning (data, text); malformed JSON raises ``SchemaError``."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {exc.lineno} column {exc.colno}: {exc.msg}",
                          exc.lineno, exc.colno) from None


def resolve(data: dict, command: Optional[str] = None, seed: Optional[int] = None,
            text: Optional[str] = None) -> dict:
    """Validate and fill every default; returns a new dict."""
    if isinstance(data, dict) and data.get("kind") == MANIFEST_KIND:
        data = data["config"]
    validate(data, text)
    cfg = _merge(BASE_DEFAULTS, data)
    if command is not None:
        cfg["command"] = command
    if seed is not None:
        cfg["ensemble"]["seed"] = int(seed)
    cmd = cfg["command"]
    if cmd not in COMMANDS:
        raise ConfigurationError(f"unknown command {cmd!r}")
    fam = cfg["noise"]["family"]
    if fam != "none":
        cfg["noise"] = _merge(NOISE_DEFAULTS, cfg["noise"])
        key = PROFILE_KEY[fam]
        if key not in cfg["noise"]:
            cfg["noise"][key] = {"scale": 0.0, "offset": 1.0}
        elif not isinstance(cfg["noise"][key], dict):
            cfg["noise"][key] = {"scale": 0.0, "offset": float(cfg["noise"][key])}
        else:
            cfg["noise"][key] = _merge({"scale": 0.0, "offset": 0.0}, cfg["noise"][key])
        for other in PROFILE_KEY.values():
            if other != key and other in cfg["noise"]:
                raise SchemaError(f"noise.{other} does not belong to the {fam} family",
                                  path=["noise", other])
        if fam == "stabilizing":
            cfg["noise"].setdefault("anchor", {"type": "stationary"})
        if fam == "additive" and "shape" not in cfg["noise"]:
            raise SchemaError("additive noise needs noise.shape", path=["noise"])
    exp_defaults = dict(EXPERIMENT_DEFAULTS[cmd])
    d = cfg["domain"]["dim"]
    exp_defaults["initial"] = {"type": "random", "decay": d / 2.0 + 1.0, "amplitude": 1.0,
                               "seed": 0}
    if cmd in ("stability", "ergodicity"):
        exp_defaults["initial_v"] = {"type": "random", "decay": d / 2.0 + 1.0,
                                     "amplitude": 1.0, "seed": 1}
    cfg["experiment"] = _merge(exp_defaults, cfg.get("experiment", {}))
    # validate again so filled values obey the schema too
    validate(cfg)
    return cfg


# --------------------------------------------------------------------------
# building objects
# --------------------------------------------------------------------------

def shear_field(domain: TorusDomain, wavenumber: int = 1, amplitude: float = 1.0) -> SpectralField:
    """u = a (sin(m y), 0[, 0])."""
    def fn(*x):
        zero = 0.0 * x[0]
        return (amplitude * np.sin(wavenumber * x[1]),) + (zero,) * (domain.dim - 1)
    return SpectralField.from_function(domain, fn)


def build_field(spec: dict, domain: TorusDomain, stationary=None) -> SpectralField:
    """Field from a field specification (see ``FIELD_SCHEMA``)."""
    kind = spec["type"]
    amp = float(spec.get("amplitude", 1.0))
    if kind == "zero":
        u = SpectralField.zeros(domain)
    elif kind == "random":
        dec = float(spec.get("decay", domain.dim / 2.0 + 1.0))
        u = random_divfree_field(domain, dec, amp, int(spec.get("seed", 0)))
    elif kind == "beltrami":
        u = beltrami_field(domain, amp)
    elif kind == "shear":
        u = shear_field(domain, int(spec.get("wavenumber", 1)), amp)
    elif kind == "atoms":
        c = np.zeros((domain.dim,) + domain.shape, dtype=complex)
        n = domain.N
        for atom in spec.get("atoms", []):
            k = [int(x) for x in atom["k"]]
            if len(k) != domain.dim or not any(k) or any(abs(x) >= n // 2 for x in k):
                raise ConfigurationError(f"atom wavenumber {k} is not an active mode at N = {n}")
            re = np.asarray(atom["re"], dtype=float)
            im = np.asarray(atom.get("im", [0.0] * len(re)), dtype=float)
            if re.shape != (domain.dim,) or im.shape != (domain.dim,):
                raise ConfigurationError(f"atom coefficients need {domain.dim} components")
            pos = tuple(x % n for x in k)
            neg = tuple(-x % n for x in k)
            c[(slice(None),) + pos] += re + 1j * im
            c[(slice(None),) + neg] += re - 1j * im
        u = leray_project(SpectralField(domain, c))
    elif kind == "file":
        if "path" not in spec:
            raise ConfigurationError("file field needs a path")
        g = load_field(spec["path"])
        if g.domain.dim != domain.dim or g.domain.N != domain.N:
            raise ConfigurationError(f"field in {spec['path']} has dim={g.domain.dim}, "
                                     f"N={g.domain.N}; expected dim={domain.dim}, N={domain.N}")
        u = SpectralField(domain, g.coeffs)
    elif kind == "stationary":
        if stationary is None:
            raise ConfigurationError("a 'stationary' field is only available where a "
                                     "stationary state is solved for")
        u = stationary()
    else:
        raise ConfigurationError(f"unknown field type {kind!r}")
    if "norm_H" in spec:
        n0 = norm(u, "H")
        if n0 == 0 and spec["norm_H"] > 0:
            raise ConfigurationError("cannot rescale a zero field to a positive norm")
        if n0 > 0:
            u = u * (float(spec["norm_H"]) / n0)
    return u


def build_marks(noise: dict) -> MarkDistribution:
    if noise.get("uniform"):
        return MarkDistribution.uniform(noise["uniform"]["low"], noise["uniform"]["high"],
                                        noise["rate"])
    atoms = [a["z"] for a in noise["atoms"]]
    weights = np.asarray([a["weight"] for a in noise["atoms"]], dtype=float)
    if weights.sum() <= 0:
        raise ConfigurationError("mark weights must have a positive sum")
    return MarkDistribution.discrete(atoms, weights / weights.sum(), noise["rate"])


@dataclass
class Resolved:
    """A resolved configuration plus the objects built from it."""

    config: dict
    domain: TorusDomain
    params: CBFParameters
    forcing: SpectralField
    _stationary: Optional[SpectralField] = field(default=None, repr=False)
    _noise: Any = field(default=None, repr=False)
    _noise_built: bool = field(default=False, repr=False)

    @property
    def command(self) -> str:
        return self.config["command"]

    @property
    def experiment(self) -> dict:
        return self.config["experiment"]

    @property
    def paths(self) -> int:
        return int(self.config["ensemble"]["paths"])

    @property
    def seed(self) -> int:
        return int(self.config["ensemble"]["seed"])

    def stationary_state(self):
        """Stationary solution for the configured forcing (solved once)."""
        if self._stationary is None:
            from .stationary import solve_stationary
            ex = self.config["experiment"]
            st = solve_stationary(self.params, self.forcing, tol=ex.get("solve_tol", 1e-12),
                                  refine=ex.get("refine"))
            if not st.converged:
                raise ConfigurationError(f"stationary solve did not converge "
                                         f"(residual {st.residual_norm:g})")
            self._stationary = st.u_inf
        return self._stationary

    def field(self, spec: dict) -> SpectralField:
        return build_field(spec, self.domain, self.stationary_state)

    @property
    def noise(self) -> Optional[JumpModel]:
        if not self._noise_built:
            self._noise = self._build_noise()
            self._noise_built = True
        return self._noise

    def _build_noise(self) -> Optional[JumpModel]:
        nz = self.config["noise"]
        fam = nz["family"]
        if fam == "none":
            return None
        prof = MarkProfile(**{k: float(v) for k, v in nz[PROFILE_KEY[fam]].items()})
        marks = build_marks(nz)
        if fam == "multiplicative":
            return JumpModel.multiplicative(marks, prof)
        if fam == "stabilizing":
            return JumpModel.stabilizing(marks, prof, self.field(nz["anchor"]))
        return JumpModel.additive(marks, prof, self.field(nz["shape"]))

    def simulation(self) -> SimulationConfig:
        t = self.config["time"]
        e = self.config["ensemble"]
        return SimulationConfig(self.domain, self.params, forcing=self.forcing, noise=self.noise,
                                kmax=self.config["domain"]["kmax"], T=float(t["T"]),
                                dt=float(t["dt"]), record_every=int(t["record_every"]),
                                seed=int(e["seed"]), chunk_size=int(e["chunk_size"]))


def build(cfg: dict) -> Resolved:
    """Objects for a resolved configuration dict."""
    dm = cfg["domain"]
    domain = TorusDomain(int(dm["dim"]), int(dm["N"]), int(dm["oversample"]))
    pr = cfg["params"]
    params = CBFParameters(float(pr["mu"]), float(pr["beta"]), float(pr["r"]))
    if cfg["command"] == "verify-operators":
        params.require_global_monotonicity()
    forcing = build_field(cfg["forcing"], domain)
    return Resolved(cfg, domain, params, forcing)


def parse_config(path, command: Optional[str] = None, seed: Optional[int] = None) -> Resolved:
    """Load, validate, fill defaults and build the configured objects."""
    data, text = load_json(path)
    return build(resolve(data, command, seed, text))


def manifest(cfg: dict, version: str, extra: Optional[Dict[str, Any]] = None) -> dict:
    out = {"kind": MANIFEST_KIND, "version": version, "command": cfg["command"],
           "seed": cfg["ensemble"]["seed"], "config": cfg}
    if extra:
        out["runtime"] = extra
    return out
