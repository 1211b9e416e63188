"""Experiment configuration: a flat, typed key-value format with sections.

Files use INI syntax (section headers, ``key = value`` lines).  Every key is
declared in the schema below with its type and admissible range; unknown
sections or keys are rejected, as are out-of-range values.  Vector values
are space-separated numbers.  The parsed configuration echoes into the run
manifest so a run is reproducible from its manifest alone.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError

EXPERIMENTS = ("sol-entropy", "sol-sweep", "chord-census", "volume-growth",
               "action-check", "noncrossing-check", "group-growth", "mpp")

_INT64_MAX = 2 ** 63 - 1


def _typed(kind, lo=None, hi=None, choices=None, length=None):
    return {"kind": kind, "lo": lo, "hi": hi, "choices": choices,
            "length": length}


SCHEMA = {
    "experiment": {
        "name": _typed("str", choices=EXPERIMENTS),
        "seed": _typed("int", lo=0, hi=_INT64_MAX),
        "workers": _typed("int", lo=1, hi=256),
        "out_dir": _typed("str"),
    },
    "manifold": {
        "kind": _typed("str", choices=("torus", "sol")),
        "lattice": _typed("floats", length=4),        # row-major basis
        "monodromy": _typed("ints", length=4),
    },
    "profile": {
        "kind": _typed("str", choices=("round", "ellipse", "fourier")),
        "axes": _typed("floats"),
        "fourier_base": _typed("float", lo=1e-6),
        "fourier_cos": _typed("floats"),
        "fourier_sin": _typed("floats"),
    },
    "cutoff": {
        "epsilon": _typed("float", lo=1e-9, hi=0.2499999),
        "safety": _typed("float", lo=1.0, hi=10.0),
    },
    "integrator": {
        "scheme": _typed("str", choices=("rk", "midpoint")),
        "rel_tol": _typed("float", lo=1e-14, hi=1e-2),
        "abs_tol": _typed("float", lo=1e-16, hi=1e-2),
        "max_step": _typed("float", lo=1e-6, hi=10.0),
        "drift_abort": _typed("float", lo=1e-14, hi=1.0),
    },
    "sol": {
        "k": _typed("float", lo=1e-6, hi=100.0),
        "mode": _typed("str", choices=("ensemble", "fixed-point")),
        "count": _typed("int", lo=1, hi=10000),
        "horizon": _typed("float", lo=0.1, hi=1e6),
        "burn_in": _typed("float", lo=0.0, hi=0.9),
        "k_values": _typed("floats"),
    },
    "census": {
        "horizon": _typed("float", lo=0.1, hi=1000.0),
        "resolution": _typed("int", lo=64, hi=1_000_000),
        "coarse_threshold": _typed("float", lo=1e-4, hi=10.0),
        "sample_dt": _typed("float", lo=0.0, hi=10.0),   # 0 = automatic
        "q0": _typed("floats"),
        "q1": _typed("floats"),
        "jitter": _typed("float", lo=0.0, hi=0.1),
        "time_floor": _typed("float", lo=0.0, hi=1.0),
        "max_candidates": _typed("int", lo=1000, hi=50_000_000),
        "pairs": _typed("int", lo=1, hi=64),
        "grid": _typed("int", lo=1, hi=16),
        "newton_tol": _typed("float", lo=1e-14, hi=1e-4),
    },
    "volume": {
        "n_max": _typed("int", lo=1, hi=64),
        "resolution": _typed("int", lo=8, hi=100_000),
        "refine_threshold": _typed("float", lo=1e-3, hi=1e3),
        "vertex_budget": _typed("int", lo=16, hi=10_000_000),
        "fit_window": _typed("int", lo=3, hi=64),
        "rel_tol": _typed("float", lo=1e-14, hi=1e-2),
    },
    "action": {
        "n_values": _typed("ints"),
        "scales": _typed("floats"),
        "chord_count": _typed("int", lo=1, hi=1000),
        "grid": _typed("int", lo=8, hi=512),
        "p_max": _typed("float", lo=0.1, hi=16.0),
    },
    "noncrossing": {
        "n_values": _typed("ints"),
        "s_points": _typed("int", lo=2, hi=1024),
        "exclusion": _typed("float", lo=0.0, hi=1.0),
    },
    "growth": {
        "n_max": _typed("int", lo=1, hi=16),
        "control_n_max": _typed("int", lo=1, hi=64),
        "fit_window": _typed("int", lo=3, hi=17),
        "control_fit_window": _typed("int", lo=3, hi=65),
    },
}

DEFAULTS = {
    "experiment": {"seed": 0, "workers": 1, "out_dir": "runs"},
    "manifold": {"kind": None, "lattice": (1.0, 0.0, 0.0, 1.0),
                 "monodromy": (2, 1, 1, 1)},
    "profile": {"kind": "round", "axes": (1.0, 2.0), "fourier_base": 1.0,
                "fourier_cos": (), "fourier_sin": ()},
    "cutoff": {"epsilon": 0.2, "safety": 1.1},
    "integrator": {"scheme": "rk", "rel_tol": 1e-10, "abs_tol": 1e-12,
                   "max_step": 0.05, "drift_abort": 1e-6},
    "sol": {"k": 1.0, "mode": "ensemble", "count": 50, "horizon": 2000.0,
            "burn_in": 0.1, "k_values": (0.75, 1.0, 1.5)},
    "census": {"horizon": 10.0, "resolution": 512, "coarse_threshold": 0.25,
               "sample_dt": 0.0, "q0": (0.0, 0.0), "q1": (0.5, 0.5),
               "jitter": 1e-3, "time_floor": 1e-6, "max_candidates": 500_000,
               "pairs": 3, "grid": 2, "newton_tol": 1e-8},
    "volume": {"n_max": 30, "resolution": 64, "refine_threshold": 0.2,
               "vertex_budget": 200_000, "fit_window": 8, "rel_tol": 1e-8},
    "action": {"n_values": (1, 2, 3), "scales": (2.0, 3.0), "chord_count": 10,
               "grid": 40, "p_max": 2.6},
    "noncrossing": {"n_values": (1, 2, 3), "s_points": 32, "exclusion": 1e-4},
    "growth": {"n_max": 12, "control_n_max": 28, "fit_window": 6,
               "control_fit_window": 8},
}

_DEFAULT_MANIFOLD = {
    "sol-entropy": "sol", "sol-sweep": "sol", "chord-census": "torus",
    "volume-growth": "torus", "action-check": "torus",
    "noncrossing-check": "torus", "group-growth": "sol", "mpp": "torus",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; sections are plain nested dicts."""

    sections: dict

    @property
    def name(self) -> str:
        return self.sections["experiment"]["name"]

    @property
    def seed(self) -> int:
        return self.sections["experiment"]["seed"]

    @property
    def workers(self) -> int:
        return self.sections["experiment"]["workers"]

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def echo(self) -> dict:
        """Canonical nested-dict form (tuples as lists) for the manifest."""
        return json.loads(json.dumps(self.sections, sort_keys=True,
                                     default=list))

    def canonical_hash(self) -> str:
        blob = json.dumps(self.sections, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse_value(raw: str, spec: dict, where: str):
    kind = spec["kind"]
    try:
        if kind == "int":
            val = int(raw)
        elif kind == "float":
            val = float(raw)
        elif kind == "str":
            val = raw.strip()
        elif kind == "ints":
            val = tuple(int(tok) for tok in raw.split())
        elif kind == "floats":
            val = tuple(float(tok) for tok in raw.split())
        else:  # pragma: no cover
            raise AssertionError(kind)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from exc
    if spec["choices"] is not None and val not in spec["choices"]:
        raise ConfigError(f"{where}: {val!r} not one of {spec['choices']}")
    if spec["length"] is not None and len(val) != spec["length"]:
        raise ConfigError(f"{where}: expected {spec['length']} entries")
    if kind in ("int", "float"):
        if spec["lo"] is not None and val < spec["lo"]:
            raise ConfigError(f"{where}: {val} below minimum {spec['lo']}")
        if spec["hi"] is not None and val > spec["hi"]:
            raise ConfigError(f"{where}: {val} above maximum {spec['hi']}")
    return val


def load_config(path: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")

    sections = {name: dict(values) for name, values in DEFAULTS.items()}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, raw in parser[sec].items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]")
            sections[sec][key] = _parse_value(raw, SCHEMA[sec][key],
                                              f"[{sec}] {key}")

    name = sections["experiment"].get("name")
    if name is None:
        raise ConfigError("missing required key [experiment] name")
    if sections["manifold"]["kind"] is None:
        sections["manifold"]["kind"] = _DEFAULT_MANIFOLD[name]
    _cross_validate(sections)
    return ExperimentConfig(sections=sections)


def _cross_validate(sections: dict):
    prof = sections["profile"]
    if prof["kind"] == "ellipse":
        if len(prof["axes"]) < 2 or any(a <= 0 for a in prof["axes"]):
            raise ConfigError("[profile] axes must be positive and match the "
                              "fiber dimension")
    mono = sections["manifold"]["monodromy"]
    if mono[0] * mono[3] - mono[1] * mono[2] != 1:
        raise ConfigError("[manifold] monodromy must have determinant 1")
    if mono[0] + mono[3] <= 2:
        raise ConfigError("[manifold] monodromy trace must exceed 2")
    lat = sections["manifold"]["lattice"]
    if abs(lat[0] * lat[3] - lat[1] * lat[2]) < 1e-12:
        raise ConfigError("[manifold] lattice basis must be invertible")
