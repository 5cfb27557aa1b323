"""Run configuration: flat key=value text with dotted sections.

The right-hand side of each assignment is JSON, so numbers, strings,
null and small lists parse without a second mini-language.  Unknown keys
and domain violations are rejected with the line they sit on; a bad run
dies at load time, not mid-experiment.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from .errors import ConfigError, CrtpruneError
from .mechanism import Mechanism

EXPERIMENT_IDS = ("E1", "E2", "E3", "E4", "E5", "E6", "E7", "E8")
DEFAULT_SEED = 987654321

_DEFAULTS: Dict[str, object] = {
    "mechanism.alpha": 0.0,
    "mechanism.beta": 1.0,
    "mechanism.stable_c": 0.0,
    "mechanism.stable_gamma": 1.5,
    "mechanism.atoms": [],
    "lambda": 1.0,
    "theta": 1.0,
    "q": 0.5,
    "replicates": 1000,
    "caps.max_nodes": 1 << 20,
    "caps.max_depth": None,
    "tolerances.root_find": 1e-12,
    "tolerances.fixed_point": 1e-14,
    "tolerances.tail": 1e-12,
    "seed": DEFAULT_SEED,
    "experiment": "all",
}


@dataclass(frozen=True)
class Caps:
    max_nodes: int = 1 << 20
    max_depth: Optional[float] = None   # height cap; None grows unhindered


@dataclass(frozen=True)
class Tolerances:
    root_find: float = 1e-12
    fixed_point: float = 1e-14
    tail: float = 1e-12


@dataclass(frozen=True)
class Config:
    mechanism: Mechanism
    lam: float
    theta: float
    q: float
    replicates: int
    caps: Caps
    tolerances: Tolerances
    seed: int
    experiment: str


def _real(values, lines, key, *, positive=False) -> float:
    v = values[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number", line=lines.get(key, 0))
    if positive and not v > 0:
        raise ConfigError(f"{key} must be positive", line=lines.get(key, 0))
    return float(v)


def _integer(values, lines, key, *, minimum) -> int:
    v = values[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer", line=lines.get(key, 0))
    if v < minimum:
        raise ConfigError(f"{key} must be at least {minimum}",
                          line=lines.get(key, 0))
    return v


def _build(values: Dict[str, object], lines: Dict[str, int]) -> Config:
    atoms_raw = values["mechanism.atoms"]
    atoms_line = lines.get("mechanism.atoms", 0)
    if not isinstance(atoms_raw, list):
        raise ConfigError("mechanism.atoms must be a list of [rate, mass] "
                          "pairs", line=atoms_line)
    atoms = []
    for entry in atoms_raw:
        ok = (isinstance(entry, list) and len(entry) == 2
              and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                      and x > 0 for x in entry))
        if not ok:
            raise ConfigError("each atom needs a positive [rate, mass] pair",
                              line=atoms_line)
        atoms.append((float(entry[0]), float(entry[1])))

    alpha = _real(values, lines, "mechanism.alpha")
    beta = _real(values, lines, "mechanism.beta")
    stable_c = _real(values, lines, "mechanism.stable_c")
    stable_gamma = _real(values, lines, "mechanism.stable_gamma")
    mech_line = min((lines[k] for k in lines if k.startswith("mechanism.")),
                    default=0)
    try:
        mech = Mechanism(alpha=alpha, beta=beta, stable_c=stable_c,
                         stable_gamma=stable_gamma, atoms=tuple(atoms))
    except CrtpruneError as exc:
        raise ConfigError(str(exc), line=mech_line) from exc

    max_depth = values["caps.max_depth"]
    if max_depth is not None:
        if (isinstance(max_depth, bool)
                or not isinstance(max_depth, (int, float)) or not max_depth > 0):
            raise ConfigError("caps.max_depth must be positive or null",
                              line=lines.get("caps.max_depth", 0))
        max_depth = float(max_depth)

    experiment = values["experiment"]
    if experiment not in EXPERIMENT_IDS + ("all",):
        raise ConfigError(
            "experiment must be one of " + ", ".join(EXPERIMENT_IDS) + ", all",
            line=lines.get("experiment", 0))

    return Config(
        mechanism=mech,
        lam=_real(values, lines, "lambda", positive=True),
        theta=_real(values, lines, "theta"),
        q=_real(values, lines, "q"),
        replicates=_integer(values, lines, "replicates", minimum=1),
        caps=Caps(max_nodes=_integer(values, lines, "caps.max_nodes",
                                     minimum=2),
                  max_depth=max_depth),
        tolerances=Tolerances(
            root_find=_real(values, lines, "tolerances.root_find",
                            positive=True),
            fixed_point=_real(values, lines, "tolerances.fixed_point",
                              positive=True),
            tail=_real(values, lines, "tolerances.tail", positive=True)),
        seed=_integer(values, lines, "seed", minimum=0),
        experiment=str(experiment),
    )


def parse_config(text: str) -> Config:
    values = dict(_DEFAULTS)
    lines: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", line=lineno)
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        try:
            values[key] = json.loads(rhs.strip())
        except json.JSONDecodeError:
            raise ConfigError(f"value for {key!r} is not valid JSON",
                              line=lineno)
        lines[key] = lineno
    return _build(values, lines)


def load_config(path: Union[str, Path]) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


def default_config() -> Config:
    return parse_config("")
