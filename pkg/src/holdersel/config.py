"""Experiment configuration documents (TOML).

A document has four sections::

    [model]         # small-noise or two-scale model record
    [experiment]    # harness name, ladders, n_paths, seed0, ...
    [output]        # summary_csv, dump_paths, paths_dir
    [tolerances]    # optional overrides

Coefficient fields are written as ``{plus = ..., minus = ...}`` tables,
where each branch is a number, a nested list, or a family table such as
``{family = "affine", const = 1.0, x_coef = [0.5]}``. A bare value or a
single family table applies to both branches. See ``README.md`` for
complete examples.

The configuration hash is the SHA-256 of the canonical JSON form of the
parsed document (sorted keys), so formatting and comments do not matter.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib
import tomli_w

from .coeffs import SmallNoiseModel, TwoScaleModel, make_measure
from .errors import ConfigError

__all__ = [
    "ExperimentConfig",
    "HARNESSES",
    "load_config",
    "parse_config",
    "dump_config",
    "config_hash",
    "model_from_dict",
    "model_to_dict",
    "apply_override",
]

HARNESSES = ("selection", "pathwise", "attraction", "moment", "exit-time", "ergodicity",
             "residual")

_SMALL_KEYS = {"kind", "d", "gamma", "drift", "rate", "fast_noise", "slow_noise", "x0",
               "regime", "noise_corr"}
_TWO_KEYS = {"kind", "d", "k", "slow_drift", "slow_diffusion", "fast_drift", "fast_diffusion",
             "slow_jump", "fast_jump", "slow_measure", "fast_measure", "cutoff",
             "diss_exponent", "diss_const", "diss_radius", "moment_exponent", "x0", "y0"}


def _canonical(obj):
    if isinstance(obj, Mapping):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_hash(doc: Mapping) -> str:
    """SHA-256 of the canonical JSON form of a parsed document."""
    text = json.dumps(_canonical(doc), sort_keys=True, separators=(",", ":"),
                      allow_nan=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _broadcast(value, shape):
    """Expand bare numbers to vector or scaled-identity constants."""
    if isinstance(value, Mapping):
        if "plus" in value:
            return {b: _broadcast(value.get(b, value["plus"]), shape) for b in ("plus", "minus")}
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool) and shape:
        if len(shape) == 1:
            return [float(value)] * shape[0]
        return (float(value) * np.eye(shape[0])).tolist()
    return value


def model_from_dict(spec: Mapping) -> SmallNoiseModel | TwoScaleModel:
    """Build a model record from its config mapping.

    Raises
    ------
    ConfigError
        On unknown keys, a missing required key, or an unknown kind.
    DomainError
        On invalid values (for example an exponent outside ``(0, 1)``).
    """
    if not isinstance(spec, Mapping):
        raise ConfigError("model section must be a table")
    kind = spec.get("kind", "small-noise")
    keys = _SMALL_KEYS if kind == "small-noise" else _TWO_KEYS if kind == "two-scale" else None
    if keys is None:
        raise ConfigError(f"unknown model kind {kind!r}; use 'small-noise' or 'two-scale'")
    unknown = set(spec) - keys
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    args = {k: v for k, v in spec.items() if k != "kind"}
    try:
        if kind == "small-noise":
            for req in ("d", "gamma", "drift", "rate", "fast_noise"):
                if req not in args:
                    raise ConfigError(f"model is missing required key {req!r}")
            d = int(args["d"])
            args.setdefault("slow_noise", 0.0)
            args["drift"] = _broadcast(args["drift"], (d,))
            args["slow_noise"] = _broadcast(args["slow_noise"], (d, d))
            args.setdefault("x0", [0.0] * d)
            return SmallNoiseModel(**args)
        for req in ("d", "k", "slow_drift", "slow_diffusion", "fast_drift", "fast_diffusion"):
            if req not in args:
                raise ConfigError(f"model is missing required key {req!r}")
        d, k = int(args["d"]), int(args["k"])
        for name, shape in (("slow_drift", (d,)), ("slow_diffusion", (d, d)),
                            ("slow_jump", (d,))):
            if name in args:
                args[name] = _broadcast(args[name], shape)
        if k > 1:
            for name, shape in (("fast_drift", (k,)), ("fast_diffusion", (k, k)),
                                ("fast_jump", (k,))):
                if name in args:
                    args[name] = _broadcast(args[name], shape)
        for name in ("slow_measure", "fast_measure"):
            if name in args:
                args[name] = make_measure(args[name])
        args.setdefault("x0", [0.0] * int(args["d"]))
        args.setdefault("y0", [0.0] * int(args["k"]))
        return TwoScaleModel(**args)
    except TypeError as exc:
        raise ConfigError(f"invalid model section: {exc}") from exc


def model_to_dict(m: SmallNoiseModel | TwoScaleModel) -> dict:
    """Config mapping of a model (inverse of :func:`model_from_dict`)."""
    if getattr(m, "residual", None) is not None:
        raise ConfigError("models with a residual process cannot be serialized")
    return _canonical(m.to_dict())


@dataclass
class ExperimentConfig:
    """Parsed and validated configuration document.

    Attributes
    ----------
    model : SmallNoiseModel or TwoScaleModel
    experiment : dict
        Harness name under ``harness`` plus its parameters; ``seed0`` is
        always present.
    output : dict
    tolerances : dict
    document : dict
        The parsed document.
    hash : str
    """

    model: Any
    experiment: dict
    output: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    document: dict = field(default_factory=dict)
    hash: str = ""

    @property
    def seed0(self) -> int:
        return int(self.experiment["seed0"])

    @property
    def harness(self) -> str:
        return self.experiment["harness"]


def parse_config(doc: Mapping) -> ExperimentConfig:
    """Validate a parsed document and build the model.

    Raises
    ------
    ConfigError
        On schema problems, including a missing ``seed0``.
    """
    if not isinstance(doc, Mapping):
        raise ConfigError("configuration must be a table")
    unknown = set(doc) - {"model", "experiment", "output", "tolerances"}
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")
    if "model" not in doc:
        raise ConfigError("configuration has no [model] section")
    exp = dict(doc.get("experiment", {}))
    if "seed0" not in exp:
        raise ConfigError("experiment.seed0 is required (no wall-clock seeding)")
    seed0 = exp["seed0"]
    if isinstance(seed0, bool) or not isinstance(seed0, int) or seed0 < 0:
        raise ConfigError(f"experiment.seed0 must be a non-negative integer, got {seed0!r}")
    harness = exp.get("harness")
    if harness not in HARNESSES:
        raise ConfigError(f"experiment.harness must be one of {HARNESSES}, got {harness!r}")
    model = model_from_dict(doc["model"])
    return ExperimentConfig(model, exp, dict(doc.get("output", {})),
                            dict(doc.get("tolerances", {})), dict(doc), config_hash(doc))


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a TOML document, apply ``section.key=value`` overrides and parse it.

    Raises
    ------
    ConfigError
        If the file cannot be read or parsed, or fails validation.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    for ov in overrides or []:
        apply_override(doc, ov)
    return parse_config(doc)


def apply_override(doc: dict, text: str) -> None:
    """Apply ``dotted.key=value`` in place; ``value`` is parsed as TOML if possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {text!r} descends into a non-table")
    node[parts[-1]] = value


def dump_config(doc: Mapping, path=None) -> str:
    """Serialize a document to TOML; write it to ``path`` if given."""
    text = tomli_w.dumps(_canonical(doc))
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def experiment_document(model, experiment: Mapping, output: Mapping | None = None,
                        tolerances: Mapping | None = None) -> dict:
    """Assemble a document from a model record and section mappings."""
    doc = {"model": model_to_dict(model), "experiment": dict(experiment)}
    if output:
        doc["output"] = dict(output)
    if tolerances:
        doc["tolerances"] = dict(tolerances)
    return _canonical(doc)


def require(exp: Mapping, key: str, kind=float):
    """Fetch a required experiment parameter with a clear error."""
    if key not in exp:
        raise ConfigError(f"experiment.{key} is required for harness {exp.get('harness')!r}")
    try:
        if kind is list:
            v = exp[key]
            return [float(a) for a in (v if isinstance(v, (list, tuple)) else [v])]
        return kind(exp[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"experiment.{key} has an invalid value {exp[key]!r}") from exc
