"""Experiment parameters: definition, validation, sweep expansion and file I/O.

Experiment files are flat YAML documents. Every top-level key is an
``ExperimentConfig`` field, except two optional sweep keys:

``axes``
    list of ``{name: <field or [field, ...]>, values: [...]}`` entries. A list
    of names binds several fields jointly; each value is then a list with one
    entry per name (used e.g. to sweep ``(num_channels, num_copies)`` pairs
    with ``C <= F``).
``epsilon_grid``
    list of positive residual thresholds used for calibration.

Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import yaml

log = logging.getLogger(__name__)

UINT64_MAX = 2**64 - 1


class Stopping(str, Enum):
    KNOWN_K = "known_k"
    RESIDUAL = "residual"


class Fusion(str, Enum):
    SINGLE = "single"
    STRICT = "strict"
    ITERATIVE = "iterative"
    SUPERCHANNEL = "superchannel"
    INDEPENDENT = "independent"


@dataclass(frozen=True)
class ExperimentConfig:
    """All scalar parameters of one Monte-Carlo experiment.

    ``epsilon=None`` with residual stopping means the threshold is calibrated
    by the harness before the main run.
    """

    users_per_channel_base: int = 256
    num_channels: int = 1
    num_copies: int = 1
    num_antennas: int = 1
    pilot_length: int = 8
    activation_prob: float = 1 / 256
    snr_db: float = 20.0
    stopping: Stopping = Stopping.RESIDUAL
    epsilon: float | None = None
    fusion: Fusion = Fusion.INDEPENDENT
    num_trials: int = 10_000
    master_seed: int = 0
    calibration_trials: int = 2_000
    max_iters: int | None = None
    assignment: str = "modular"
    pilot_mode: str = "experiment"
    channel_order: str = "ascending"

    def __post_init__(self):
        # accept plain strings from files and CLI flags
        if not isinstance(self.stopping, Stopping):
            object.__setattr__(self, "stopping", Stopping(self.stopping))
        if not isinstance(self.fusion, Fusion):
            object.__setattr__(self, "fusion", Fusion(self.fusion))

    @property
    def snr_linear(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def users_per_channel(self) -> int:
        """Q' = Q*C, the number of users sharing each channel."""
        return self.users_per_channel_base * self.num_copies

    @property
    def total_users(self) -> int:
        return self.users_per_channel_base * self.num_channels

    def as_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["stopping"] = self.stopping.value
        out["fusion"] = self.fusion.value
        return out


CONFIG_FIELDS = tuple(f.name for f in fields(ExperimentConfig))

_CHOICES = {
    "assignment": ("modular", "random"),
    "pilot_mode": ("experiment", "trial"),
    "channel_order": ("ascending", "random"),
}


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self):
        return f"{self.field}: {self.rule}"


class ConfigError(ValueError):
    """Raised with every violated invariant, not only the first."""

    def __init__(self, violations: Sequence[Violation], where: str = ""):
        self.violations = list(violations)
        self.where = where
        prefix = f"{where}: " if where else ""
        super().__init__(prefix + "; ".join(str(v) for v in self.violations))


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def check(cfg: ExperimentConfig) -> list[Violation]:
    """Return all violated invariants of ``cfg`` (empty when valid)."""
    bad: list[Violation] = []
    for name in ("users_per_channel_base", "num_channels", "num_copies",
                 "num_antennas", "pilot_length", "num_trials", "calibration_trials"):
        value = getattr(cfg, name)
        if not _is_int(value) or value < 1:
            bad.append(Violation(name, "must be a positive integer"))
    if not _is_int(cfg.master_seed) or not 0 <= cfg.master_seed <= UINT64_MAX:
        bad.append(Violation("master_seed", "must be a 64-bit unsigned integer"))
    p = cfg.activation_prob
    if not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0:
        bad.append(Violation("activation_prob", "must lie in [0, 1]"))
    if not isinstance(cfg.snr_db, (int, float)) or not math.isfinite(cfg.snr_db):
        bad.append(Violation("snr_db", "must be a finite real"))
    if cfg.epsilon is not None and (not isinstance(cfg.epsilon, (int, float))
                                    or not cfg.epsilon > 0):
        bad.append(Violation("epsilon", "must be a positive real"))
    if cfg.epsilon is not None and cfg.stopping is Stopping.KNOWN_K:
        bad.append(Violation("epsilon", "only meaningful with residual stopping"))
    if _is_int(cfg.num_copies) and _is_int(cfg.num_channels):
        if cfg.num_copies > cfg.num_channels:
            bad.append(Violation("num_copies", "C <= F violated"))
        if cfg.num_channels == 1 and cfg.fusion is not Fusion.SINGLE:
            bad.append(Violation("fusion", "F = 1 requires single-channel fusion"))
        if cfg.fusion is Fusion.SINGLE and (cfg.num_channels != 1 or cfg.num_copies != 1):
            bad.append(Violation("fusion", "single-channel fusion requires F = C = 1"))
    if cfg.max_iters is not None:
        if not _is_int(cfg.max_iters) or cfg.max_iters < 1:
            bad.append(Violation("max_iters", "must be a positive integer"))
        elif _is_int(cfg.pilot_length) and cfg.max_iters > cfg.pilot_length:
            bad.append(Violation("max_iters", "must not exceed pilot_length"))
    for name, allowed in _CHOICES.items():
        if getattr(cfg, name) not in allowed:
            bad.append(Violation(name, f"must be one of {', '.join(allowed)}"))
    return bad


def normalize(cfg: ExperimentConfig) -> ExperimentConfig:
    """With F = C = 1 every strategy collapses to the single-channel one."""
    if cfg.num_channels == 1 and cfg.num_copies == 1 and cfg.fusion is not Fusion.SINGLE:
        cfg = replace(cfg, fusion=Fusion.SINGLE)
    return cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Return the normalized ``cfg`` if it is valid, else raise ``ConfigError``
    listing all problems."""
    cfg = normalize(cfg)
    bad = check(cfg)
    if bad:
        raise ConfigError(bad)
    if cfg.users_per_channel > cfg.pilot_length:
        log.debug("under-determined regime: Q'=%d > T_p=%d",
                  cfg.users_per_channel, cfg.pilot_length)
    return cfg


def underdetermined(cfg: ExperimentConfig) -> bool:
    return cfg.users_per_channel > cfg.pilot_length


@dataclass(frozen=True)
class Axis:
    names: tuple[str, ...]
    values: tuple[tuple, ...]

    @classmethod
    def of(cls, name, values) -> "Axis":
        if isinstance(name, str):
            return cls((name,), tuple((v,) for v in values))
        names = tuple(name)
        return cls(names, tuple(tuple(v) for v in values))


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axes: tuple[Axis, ...] = ()
    epsilon_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(
            a if isinstance(a, Axis) else Axis.of(*a) for a in self.axes))
        if self.epsilon_grid is not None:
            object.__setattr__(self, "epsilon_grid", tuple(float(e) for e in self.epsilon_grid))


def check_spec(spec: SweepSpec) -> list[Violation]:
    bad = []
    for axis in spec.axes:
        for name in axis.names:
            if name not in CONFIG_FIELDS:
                bad.append(Violation(name, "not an ExperimentConfig field"))
        if not axis.values:
            bad.append(Violation(",".join(axis.names), "axis has no values"))
        for v in axis.values:
            if len(v) != len(axis.names):
                bad.append(Violation(",".join(axis.names),
                                     f"value {list(v)} does not match axis arity"))
    if spec.epsilon_grid is not None:
        if not spec.epsilon_grid:
            bad.append(Violation("epsilon_grid", "grid is empty"))
        elif any(not e > 0 for e in spec.epsilon_grid):
            bad.append(Violation("epsilon_grid", "thresholds must be positive"))
    return bad


def expand(spec: SweepSpec) -> list[ExperimentConfig]:
    """Cartesian product of the axes applied to the base config.

    The first axis varies slowest. Raises ``ConfigError`` naming the
    offending cell when a produced config is invalid.
    """
    bad = check_spec(spec)
    if bad:
        raise ConfigError(bad, "sweep")
    out = []
    for i, combo in enumerate(itertools.product(*(a.values for a in spec.axes))):
        updates = {}
        for axis, value in zip(spec.axes, combo):
            updates.update(zip(axis.names, value))
        cfg = normalize(replace(spec.base, **updates))
        bad = check(cfg)
        if bad:
            raise ConfigError(bad, f"sweep cell {i} {updates}")
        out.append(cfg)
    return out


def config_from_dict(d: dict[str, Any], base: ExperimentConfig | None = None,
                     coerce: bool = True) -> ExperimentConfig:
    unknown = sorted(set(d) - set(CONFIG_FIELDS))
    if unknown:
        raise ConfigError([Violation(k, "unknown key") for k in unknown])
    cfg = replace(base or ExperimentConfig(), **d)
    return normalize(cfg) if coerce else cfg


def load_spec(path: str | Path, overrides: dict[str, Any] | None = None) -> SweepSpec:
    """Read an experiment file; ``overrides`` replace base fields (CLI flags)."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError([Violation("<document>", "must be a key-value mapping")])
    doc = dict(doc)
    axes_doc = doc.pop("axes", []) or []
    grid = doc.pop("epsilon_grid", None)
    doc.update(overrides or {})
    # the base is normalized per sweep cell, after the axes are applied
    base = config_from_dict(doc, coerce=False)
    axes = []
    for entry in axes_doc:
        if not isinstance(entry, dict) or set(entry) != {"name", "values"}:
            raise ConfigError([Violation("axes", "entries need exactly 'name' and 'values'")])
        axes.append(Axis.of(entry["name"], entry["values"]))
    spec = SweepSpec(base, tuple(axes), tuple(grid) if grid is not None else None)
    bad = check_spec(spec)
    if bad:
        raise ConfigError(bad)
    return spec


def spec_to_dict(spec: SweepSpec) -> dict[str, Any]:
    doc = spec.base.as_dict()
    if spec.axes:
        doc["axes"] = [
            {"name": a.names[0] if len(a.names) == 1 else list(a.names),
             "values": [v[0] if len(a.names) == 1 else list(v) for v in a.values]}
            for a in spec.axes
        ]
    if spec.epsilon_grid is not None:
        doc["epsilon_grid"] = list(spec.epsilon_grid)
    return doc


def dump_spec(spec: SweepSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(spec_to_dict(spec), fh, sort_keys=False)
