"""Run configuration: flat key=value files, JSON, overrides, hashing.

A config file is either a JSON object or a line-oriented list of dotted
assignments:

    # comment
    dim = 2
    params.nu = 0.5
    noise.family = "linear"

Values are parsed as JSON where possible (numbers, booleans, null,
quoted strings) and fall back to bare strings.  The same ``a.b = v``
grammar drives command-line overrides.

``config_hash`` digests the canonical JSON form of the merged mapping,
so manifests identify runs without embedding timestamps or paths.
"""

from __future__ import annotations

import copy
import hashlib
import json

import numpy as np

from . import noise as nz
from . import spectral as sp
from .forward import SimConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "dim": 2,
    "n_max": 8,
    "dt": 0.01,
    "steps": 100,
    "seed": 0,
    "samples": 16,
    "p_exp": 8.0,
    "params": {"nu": 0.5, "alpha1": 0.4, "alpha2": -0.1, "beta": 0.3},
    "noise": {"K": 8, "family": "linear", "c0": 0.1, "modulation": 0.0},
    "stop": {"M": 10.0, "blowup_factor": 10.0},
    "cost": {"lam": 0.1, "variant": "l2"},
    "control": {"radius": 1.0, "iters": 20, "step0": 1.0, "n_dirs": 64},
    "init": {"amplitude": 0.8, "kmax": None, "seed": 100},
    "target": {"kind": "random", "amplitude": 0.5, "kmax": None, "seed": 200},
}


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(tree: dict, key: str, value):
    parts = key.strip().split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into scalar at {p!r} in {key!r}")
    node[parts[-1]] = value


def parse_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON config: {e}") from e
    tree: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        _set_dotted(tree, key, _parse_value(val))
    return tree


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load(path=None, overrides=()) -> dict:
    """Merged mapping: defaults <- file <- key=value override strings."""
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as f:
            tree = _merge(tree, parse_text(f.read()))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must look like key=value, got {ov!r}")
        key, _, val = ov.partition("=")
        patch: dict = {}
        _set_dotted(patch, key, _parse_value(val))
        tree = _merge(tree, patch)
    return tree


def config_hash(tree: dict) -> str:
    canon = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def build_sim(tree: dict) -> SimConfig:
    try:
        params = sp.PhysicalParams(
            nu=float(tree["params"]["nu"]),
            alpha1=float(tree["params"]["alpha1"]),
            alpha2=float(tree["params"]["alpha2"]),
            beta=float(tree["params"]["beta"]),
        )
        model = nz.NoiseModel(
            K=int(tree["noise"]["K"]),
            family=str(tree["noise"]["family"]),
            c0=float(tree["noise"]["c0"]),
            modulation=float(tree["noise"].get("modulation", 0.0)),
        )
        return SimConfig(
            dim=int(tree["dim"]),
            n_max=int(tree["n_max"]),
            dt=float(tree["dt"]),
            steps=int(tree["steps"]),
            params=params,
            model=model,
            M=float(tree["stop"]["M"]),
            p_exp=float(tree["p_exp"]),
            seed=int(tree["seed"]),
            blowup_factor=float(tree["stop"]["blowup_factor"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def initial_field(tree: dict, cfg: SimConfig):
    block = tree["init"]
    rng = np.random.default_rng(int(block["seed"]))
    kmax = block.get("kmax")
    return sp.random_field(
        cfg.grid,
        rng,
        kmax=None if kmax is None else int(kmax),
        amplitude=float(block["amplitude"]),
    )


def target_field(tree: dict, cfg: SimConfig):
    block = tree["target"]
    if block.get("kind", "random") == "zero":
        return np.zeros((cfg.grid.dim,) + cfg.grid.shape, dtype=complex)
    rng = np.random.default_rng(int(block["seed"]))
    kmax = block.get("kmax")
    return sp.random_field(
        cfg.grid,
        rng,
        kmax=None if kmax is None else int(kmax),
        amplitude=float(block["amplitude"]),
    )
