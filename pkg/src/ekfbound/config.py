"""Scenario configuration: one JSON document with an explicit schema version."""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigurationError
from .filter import FilterConfig, QcSpec
from .sdp import SdpSettings
from .systems import make_system, CATALOG

SCHEMA_VERSION = 1

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_box = {
    "type": "array",
    "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": ["number", "null"]}},
}
_qc = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["norm", "sector"]},
        "gamma": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "auto"}]},
        "alpha": {"type": "number"},
        "beta": {"type": "number"},
        "box": _box,
        "grid_density": {"type": "integer", "minimum": 10},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "system", "horizon", "initial"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["id"],
            "properties": {"id": {"enum": sorted(CATALOG)}, "params": {"type": "object"}},
            "additionalProperties": False,
        },
        "horizon": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "initial": {
            "type": "object",
            "required": ["mean", "covariance"],
            "properties": {"mean": {"type": "array", "items": {"type": "number"}}, "covariance": _matrix},
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {"Q": _matrix, "R": _matrix},
            "additionalProperties": False,
        },
        "inputs": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "qc": {
            "type": "object",
            "properties": {"dynamics": _qc, "measurement": _qc},
            "additionalProperties": False,
        },
        "sdp": {
            "type": "object",
            "properties": {
                "feastol": {"type": "number", "exclusiveMinimum": 0},
                "gap_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "strict_margin": {"type": "number", "minimum": 0},
                "certificate_tol": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "oracle": {
            "type": "object",
            "properties": {
                "enabled": {"type": "boolean"},
                "samples": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "confidence_sigma": {"type": "number", "minimum": 0},
                "bootstrap": {"type": "integer", "minimum": 2},
                "max_violation_rate": {"type": "number", "minimum": 0, "maximum": 1},
                "mode": {"enum": ["ekf", "frozen"]},
                "moment": {"enum": ["central", "raw"]},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {
                "dir": {"type": "string"},
                "csv": {"type": "string"},
                "summary": {"type": "string"},
                "compare_csv": {"type": "string"},
                "verify_report": {"type": "string"},
                "record_timing": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "flags": {
            "type": "object",
            "properties": {
                "experimental_overbound": {"type": "boolean"},
                "continue_on_failure": {"type": "boolean"},
                "trace_bounds": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "points": {"type": "integer", "minimum": 1},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "A_perturbation": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "validate_qc_samples": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


@dataclass
class OracleSettings:
    enabled: bool = False
    samples: int = 100_000
    seed: int = 1
    confidence_sigma: float = 3.0
    bootstrap: int = 200
    max_violation_rate: float = 0.01
    mode: str = "ekf"
    moment: str = "central"


@dataclass
class OutputSettings:
    dir: str = "out"
    csv: str = "records.csv"
    summary: str = "summary.json"
    compare_csv: str = "compare.csv"
    verify_report: str = "verify.json"
    record_timing: bool = False


@dataclass
class ScenarioConfig:
    name: str
    system_id: str
    system_params: dict
    horizon: int
    x0_mean: np.ndarray
    P0: np.ndarray
    seed: int = 0
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = None
    filter: FilterConfig = field(default_factory=FilterConfig)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    verify: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def build_system(self):
        system = make_system(self.system_id, **self.system_params)
        if self.Q is not None or self.R is not None:
            system = system.with_noise(self.Q, self.R)
        if self.x0_mean.size != system.state_dim or self.P0.shape != (system.state_dim,) * 2:
            raise ConfigurationError("initial mean/covariance do not match the system state dimension")
        if self.inputs is not None and self.inputs.shape != (self.horizon, system.input_dim):
            raise ConfigurationError(f"inputs must have shape ({self.horizon}, {system.input_dim})")
        return system


def _qc_spec(d):
    if d is None:
        return QcSpec()
    d = dict(d)
    if "box" in d:
        d["box"] = [[-np.inf if lo is None else lo, np.inf if hi is None else hi] for lo, hi in d["box"]]
    return QcSpec(**d)


def parse_config(doc, seed=None, out_dir=None, threads=None):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {path}: {exc.message}") from None

    flags = doc.get("flags", {})
    sdp = SdpSettings(**doc.get("sdp", {}))
    out = OutputSettings(**doc.get("output", {}))
    if out_dir is not None:
        out.dir = str(out_dir)
    top_seed = doc.get("seed", 0) if seed is None else int(seed)
    oracle_doc = dict(doc.get("oracle", {}))
    if seed is not None:
        oracle_doc["seed"] = top_seed + 1
    else:
        oracle_doc.setdefault("seed", top_seed + 1)
    fcfg = FilterConfig(
        dynamics_qc=_qc_spec(doc.get("qc", {}).get("dynamics")),
        measurement_qc=_qc_spec(doc.get("qc", {}).get("measurement")),
        sdp=sdp,
        continue_on_failure=flags.get("continue_on_failure", False),
        experimental_overbound=flags.get("experimental_overbound", False),
        trace_bounds=flags.get("trace_bounds", True),
        validate_qc_samples=doc.get("validate_qc_samples", 1000),
        threads=threads if threads is not None else doc.get("threads", 1),
        record_timing=out.record_timing,
    )
    noise = doc.get("noise", {})
    cfg = ScenarioConfig(
        name=doc.get("name", doc["system"]["id"]),
        system_id=doc["system"]["id"],
        system_params=doc["system"].get("params", {}),
        horizon=doc["horizon"],
        x0_mean=np.asarray(doc["initial"]["mean"], dtype=float),
        P0=np.atleast_2d(np.asarray(doc["initial"]["covariance"], dtype=float)),
        seed=top_seed,
        Q=np.asarray(noise["Q"], dtype=float) if "Q" in noise else None,
        R=np.asarray(noise["R"], dtype=float) if "R" in noise else None,
        inputs=np.asarray(doc["inputs"], dtype=float) if "inputs" in doc else None,
        filter=fcfg,
        oracle=OracleSettings(**oracle_doc),
        output=out,
        verify=doc.get("verify", {}),
        raw=doc,
    )
    cfg.build_system()  # surfaces catalog/dimension problems as config errors
    return cfg


def load_config(path, **overrides):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(doc, **overrides)
