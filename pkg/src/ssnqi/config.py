"""Versioned JSON experiment configuration."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .frames import Geometry
from .optics import DetectorModel, ObjectMask, pi_glyph
from .statgen import PairKernel, SourceModel
from .validation import ConfigError

CONFIG_VERSION = 1

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["version", "geometry", "source"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "geometry": {
            "type": "object",
            "required": ["width", "height", "n_frames"],
            "additionalProperties": False,
            "properties": {"width": _POS_INT, "height": _POS_INT, "n_frames": _POS_INT},
        },
        "source": {
            "type": "object",
            "required": ["kind", "n0"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["twin", "coherent", "thermal", "coherent_split"]},
                "n0": {"type": "number", "minimum": 0},
                "modes": {"type": "number", "exclusiveMinimum": 0},
                "kernel": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "shape": {"enum": ["delta", "uniform", "gaussian"]},
                        "radius": {"type": "integer", "minimum": 0},
                        "width": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "detector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta": {"type": "number", "minimum": 0, "maximum": 1},
                "eta_signal": {"type": "number", "minimum": 0, "maximum": 1},
                "eta_idler": {"type": "number", "minimum": 0, "maximum": 1},
                "dark_mean": {"type": "number", "minimum": 0},
                "read_noise_rms": {"type": "number", "minimum": 0},
                "bin_factor": _POS_INT,
            },
        },
        "object": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["none", "uniform", "half", "pi", "pgm"]},
                "alpha": {"type": "number", "minimum": 0, "maximum": 1},
                "path": {"type": "string"},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "flat_field": {"type": "boolean"},
                "shift": {"oneOf": [{"type": "null"},
                                    {"type": "array", "items": {"type": "integer"},
                                     "minItems": 2, "maxItems": 2}]},
                "n_bins": _POS_INT,
                "min_members": _POS_INT,
                "margin": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 0}]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigmas": {"type": "array", "items": _NUM, "minItems": 2},
                "etas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                      "maximum": 1}, "minItems": 2},
                "detected_mean": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
    },
}

DEFAULTS = {
    "detector": {"dark_mean": 0.0, "read_noise_rms": 0.0, "bin_factor": 1},
    "object": {"kind": "none", "alpha": 0.0},
    "analysis": {"flat_field": True, "shift": None, "n_bins": 5, "min_members": 20, "margin": None},
    "sweep": {"detected_mean": 7000.0},
    "seed": 0,
    "output_dir": "out",
}


@dataclass
class ExperimentConfig:
    geometry: Geometry
    source: SourceModel
    detector: DetectorModel
    object: dict
    analysis: dict
    sweep: dict
    seed: int
    output_dir: str
    raw: dict

    def mask(self, base_dir: Path | None = None) -> ObjectMask | None:
        """Object mask on the physical (pre-binning) pixel grid."""
        kind = self.object["kind"]
        h, w = self.geometry.height, self.geometry.width
        alpha = float(self.object.get("alpha", 0.0))
        if kind == "none":
            return None
        if kind == "uniform":
            return ObjectMask.uniform(h, w, alpha)
        if kind == "half":
            m = ObjectMask.uniform(h, w, alpha).alpha
            m[:, w // 2:] = 0.0
            return ObjectMask(m)
        if kind == "pi":
            return pi_glyph(h, w, alpha)
        path = Path(self.object["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        mask = ObjectMask.from_pgm(path)
        if mask.shape != (h, w):
            raise ConfigError(f"object mask {path} is {mask.shape[1]}x{mask.shape[0]}, "
                              f"geometry is {w}x{h}")
        return mask

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _line_of(text: str, path) -> int | None:
    """Best-effort line number of the JSON member addressed by ``path``."""
    pos, found = 0, False
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos, found = m.start(), True
    return text.count("\n", 0, pos) + 1 if found else None


def _merge_defaults(data: dict) -> dict:
    out = copy.deepcopy(data)
    for key, value in DEFAULTS.items():
        if isinstance(value, dict):
            merged = dict(value)
            merged.update(out.get(key, {}))
            out[key] = merged
        else:
            out.setdefault(key, value)
    return out


def _kernel(spec: dict | None) -> PairKernel:
    spec = spec or {"shape": "delta"}
    shape = spec.get("shape", "delta")
    radius = int(spec.get("radius", 0))
    if shape == "delta":
        return PairKernel.delta()
    if shape == "uniform":
        return PairKernel.uniform(radius)
    return PairKernel.gaussian(radius, float(spec.get("width", 0.5)))


def config_from_dict(data: dict, text: str | None = None, origin: str = "<config>") -> ExperimentConfig:
    if isinstance(data, dict) and "config" in data and "format_version" in data:
        data = data["config"]  # a run manifest
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        line = _line_of(text, list(exc.absolute_path)) if text else None
        where = f"{origin}:{line}" if line else origin
        raise ConfigError(f"{where}: {loc}: {exc.message}") from None
    full = _merge_defaults(data)
    det = full["detector"]
    if "eta" in det:
        if "eta_signal" in det or "eta_idler" in det:
            raise ConfigError(f"{origin}: detector: give either eta or eta_signal/eta_idler")
        eta_s = eta_i = det["eta"]
    else:
        eta_s, eta_i = det.get("eta_signal", 1.0), det.get("eta_idler", 1.0)
    src = full["source"]
    try:
        geometry = Geometry(**full["geometry"])
        source = SourceModel(src["kind"], float(src["n0"]), float(src.get("modes", 1e4)),
                             _kernel(src.get("kernel")))
        detector = DetectorModel(float(eta_s), float(eta_i), float(det["dark_mean"]),
                                 float(det["read_noise_rms"]), int(det["bin_factor"]))
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    if geometry.width % detector.bin_factor or geometry.height % detector.bin_factor:
        raise ConfigError(f"{origin}: bin_factor {detector.bin_factor} does not divide "
                          f"{geometry.width}x{geometry.height}")
    if full["object"]["kind"] == "pgm" and "path" not in full["object"]:
        raise ConfigError(f"{origin}: object kind 'pgm' needs a path")
    return ExperimentConfig(geometry, source, detector, full["object"], full["analysis"],
                            full["sweep"], int(full["seed"]), full["output_dir"], copy.deepcopy(data))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_dict(data, text, str(path))
