"""Run configuration: JSON schema, volume conversion and the shipped presets.

A config file is one JSON object with a ``version`` key. Every field has a
default; :func:`dump_config` always writes the fully expanded form, so an
output directory records exactly what ran.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .auction import AuctionParams, VolumeTargets
from .engine import SimParams
from .errors import ConfigurationError, ParameterError
from .field import GridGeom
from .seeding import RNG_ALGORITHM

SCHEMA_VERSION = 1
TWO_PI = 2.0 * math.pi


@dataclass
class GridConfig:
    dims: list[int] = field(default_factory=lambda: [256, 256])
    lengths: list[float] = field(default_factory=lambda: [TWO_PI, TWO_PI])


@dataclass
class AuctionConfig:
    eps0: float = 0.1
    alpha: float = 4.0
    eps_min: float = 1e-7
    price_rule: str = "post"
    max_bids_per_cell: int = 10_000


@dataclass
class SeedConfig:
    rng_seed: int = 0
    inner_box: Any = "auto"
    rng_algorithm: str = RNG_ALGORITHM


@dataclass
class InsertionConfig:
    position: list[float]
    volume: float
    where: str = "boundary"


@dataclass
class FlowConfig:
    """Volume ramp. ``target`` is a bubble id, ``"interior"`` or ``"border"``.

    The keywords resolve after the initial relaxation to the lowest-numbered
    bubble without (or with) contact to the complement.
    """

    target: Any = 1
    dV: float = 0.004
    v_start: float = 0.016
    v_end: float = 0.4
    direction: str = "up"
    insertions: list[InsertionConfig] = field(default_factory=list)
    on_nonconverged: str = "flag"
    change_factor: float = 5.0
    jump_factor: float = 10.0


@dataclass
class SearchConfig:
    restarts: int = 1
    energy_tol: float = 1e-3
    overlap_tol: float = 0.9


@dataclass
class OutputConfig:
    dir: str = "out"
    format: str = "raw"
    snapshot_every: int = 0
    ramp_snapshots: bool = True


@dataclass
class RunConfig:
    version: int = SCHEMA_VERSION
    name: str = "custom"
    grid: GridConfig = field(default_factory=GridConfig)
    tau: float = 0.0625
    max_iters: int = 5000
    stationary_window: int = 1
    auction: AuctionConfig = field(default_factory=AuctionConfig)
    volumes: list[float] = field(default_factory=list)
    seed: SeedConfig = field(default_factory=SeedConfig)
    initial: str | None = None
    flow: FlowConfig | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- derived objects

    def geom(self) -> GridGeom:
        return GridGeom.box(tuple(self.grid.dims), tuple(self.grid.lengths))

    def sim_params(self) -> SimParams:
        return SimParams(
            tau=self.tau,
            auction=AuctionParams(**asdict(self.auction)),
            max_iters=self.max_iters,
            stationary_window=self.stationary_window,
        )

    def targets(self) -> VolumeTargets:
        geom = self.geom()
        return VolumeTargets.from_bubbles(cell_counts(self.volumes, geom.cell_volume), geom.n_cells)

    def validate(self) -> None:
        if self.version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported config version {self.version}; expected {SCHEMA_VERSION}")
        if len(self.grid.dims) not in (2, 3) or len(self.grid.lengths) != len(self.grid.dims):
            raise ConfigurationError("grid needs 2 or 3 dims with one length per axis")
        if self.seed.rng_algorithm != RNG_ALGORITHM:
            raise ConfigurationError(f"only {RNG_ALGORITHM} is available")
        if self.output.format not in ("p2", "vtk", "raw"):
            raise ConfigurationError(f"unknown output format {self.output.format!r}")
        if (self.output.format, len(self.grid.dims)) in (("p2", 3), ("vtk", 2)):
            raise ConfigurationError(f"format {self.output.format!r} does not fit a {len(self.grid.dims)}D grid")
        if self.initial is None and not self.volumes:
            raise ConfigurationError("volume list is empty")
        if any(not v > 0 for v in self.volumes):
            raise ConfigurationError("bubble volumes must be positive")
        try:
            self.geom()
            self.sim_params()
            if self.volumes:
                self.targets().check(self.geom().n_cells)
        except ParameterError as exc:
            raise ConfigurationError(str(exc)) from exc


def cell_counts(volumes, cell_volume: float) -> list[int]:
    """Largest-remainder rounding of real volumes to integer cell counts.

    The counts sum to the rounded total volume; remainders break ties by
    bubble index.
    """
    ideal = np.asarray(volumes, dtype=float) / cell_volume
    if ideal.size == 0:
        return []
    total = int(round(float(ideal.sum())))
    base = np.floor(ideal).astype(np.int64)
    short = total - int(base.sum())
    order = np.argsort(-(ideal - base), kind="stable")
    base[order[:short]] += 1
    if np.any(base < 1):
        raise ConfigurationError("a bubble volume rounds to zero cells at this resolution")
    return [int(c) for c in base]


def to_cells(volume: float, cell_volume: float) -> int:
    return max(1, int(round(volume / cell_volume)))


# -- (de)serialization


def _build(cls, data):
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected an object for {cls.__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigurationError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in ("grid", "auction", "seed", "search", "output"):
            value = _build(_NESTED[key], value)
        elif key == "flow" and value is not None:
            value = _build(FlowConfig, value)
        elif key == "insertions":
            value = [_build(InsertionConfig, v) for v in value]
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


_NESTED = {
    "grid": GridConfig,
    "auction": AuctionConfig,
    "seed": SeedConfig,
    "search": SearchConfig,
    "output": OutputConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    if "version" not in data:
        raise ConfigurationError("config has no 'version' key")
    cfg = _build(RunConfig, data)
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)


def dumps_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def load_config(path) -> RunConfig:
    return loads_config(Path(path).read_text())


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


# -- presets
#
# Volumes are in domain units on an L x L (x L) periodic box. Kernel width,
# box size and grid are chosen so that sqrt(tau) spans several cells and
# the bubbles are not much smaller than 2 sqrt(tau).


def _base(name, dims, lengths, volumes, **kw) -> RunConfig:
    cfg = RunConfig(name=name, grid=GridConfig(list(dims), list(lengths)), volumes=list(volumes), **kw)
    return cfg


def _fig1():
    return _base("fig1-2d-n12", (256, 256), (TWO_PI, TWO_PI), [0.4] * 12)


def _fig2(n: int):
    cfg = _base(f"fig2-2d-n{n}", (256, 256), (TWO_PI, TWO_PI), [0.4] * n)
    cfg.search = SearchConfig(restarts=20)
    return cfg


def _fig3():
    cfg = _base("fig3-2d-n16", (256, 256), (TWO_PI, TWO_PI), [0.4] * 16)
    cfg.search = SearchConfig(restarts=50)
    return cfg


def _fig5():
    return _base("fig5-3d-n8", (96, 96, 96), (TWO_PI,) * 3, [1.0] * 8, tau=0.1)


def _fig6(variant: str):
    V, dV, v = 0.4, 0.004, 0.016
    c = TWO_PI / 2
    if variant == "top":
        spots = [[c, c + 3.0], [c, c + 3.0], [c, c + 3.0]]
    else:
        spots = [[c + 3.0, c], [c - 3.0, c], [c, c + 3.0]]
    cfg = _base(f"fig6-2d-{variant}", (256, 256), (TWO_PI, TWO_PI), [V, v])
    cfg.flow = FlowConfig(
        target=2, dV=dV, v_start=v, v_end=V, direction="up",
        insertions=[InsertionConfig(p, v) for p in spots],
    )
    return cfg


def _fig7():
    V, dV, v = 0.677, 0.00496, 0.0201
    # at tau = 0.0625 the kernel is as wide as half a bubble radius and the ramp is reversible
    cfg = _base("fig7-2d-hysteresis", (256, 256), (TWO_PI, TWO_PI), [V] * 6 + [v], tau=0.02)
    cfg.flow = FlowConfig(target=7, dV=dV, v_start=v, v_end=1.5 * V, direction="up-down")
    return cfg


def _fig8(where: str):
    V, dV = 0.1474, 0.02
    cfg = _base(f"fig8-2d-{where}", (256, 256), (4.0, 4.0), [V] * 7, tau=0.02)
    target = "interior" if where == "middle" else "border"
    cfg.flow = FlowConfig(target=target, dV=dV, v_start=V, v_end=12 * V, direction="up")
    return cfg


def _fig9(n: int):
    cfg = _base(f"fig9-3d-n{n}", (96, 96, 96), (TWO_PI,) * 3, [1.0] * n, tau=0.1)
    cfg.search = SearchConfig(restarts=10)
    return cfg


def _fig10():
    cfg = _base("fig10-3d-n8", (96, 96, 96), (TWO_PI,) * 3, [1.0] * 8, tau=0.1)
    cfg.search = SearchConfig(restarts=100)
    return cfg


_FIXED = {
    "fig1-2d-n12": _fig1,
    "fig3-2d-n16": _fig3,
    "fig5-3d-n8": _fig5,
    "fig6-2d-top": lambda: _fig6("top"),
    "fig6-2d-bottom": lambda: _fig6("bottom"),
    "fig7-2d-hysteresis": _fig7,
    "fig8-2d-middle": lambda: _fig8("middle"),
    "fig8-2d-border": lambda: _fig8("border"),
    "fig10-3d-n8": _fig10,
}
_PATTERNS = {
    re.compile(r"fig2-2d-n(\d+)$"): _fig2,
    re.compile(r"fig9-3d-n(\d+)$"): _fig9,
}


def preset_names() -> list[str]:
    return sorted(_FIXED) + ["fig2-2d-n<k>", "fig9-3d-n<k>"]


def preset(name: str) -> RunConfig:
    if name in _FIXED:
        cfg = _FIXED[name]()
    else:
        for pattern, make in _PATTERNS.items():
            m = pattern.match(name)
            if m and int(m.group(1)) >= 1:
                cfg = make(int(m.group(1)))
                break
        else:
            raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    cfg.validate()
    return cfg
