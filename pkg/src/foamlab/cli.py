"""``foamlab`` command line: evolve, search, ramp, analyze, export.

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .auction import VolumeTargets
from .config import RunConfig, dump_config, dumps_config, load_config, preset, preset_names, to_cells
from .energy import total_energy
from .engine import evolve
from .errors import (
    AuctionError,
    ConfigurationError,
    ConvergenceError,
    InfeasibleRampError,
    InsertionError,
    ParameterError,
)
from .field import Kernel, LabelField
from .flows import FlowSchedule, InsertionEvent, multi_restart_search, quasi_static_ramp
from .io import EXTENSIONS, FORMATS, export_labels, import_labels, write_ramp_csv, write_trace_csv
from .seeding import SeedSpec, random_voronoi_init

logger = logging.getLogger("foamlab")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_IO = 0, 2, 3, 4


class UsageError(ConfigurationError):
    pass


# -- config resolution


def resolve_config(args) -> RunConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise UsageError("give either --config or --preset, not both")
    if getattr(args, "config", None):
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        raise UsageError("need --config or --preset")
    if getattr(args, "seed", None) is not None:
        cfg.seed.rng_seed = int(args.seed)
    if getattr(args, "restarts", None) is not None:
        cfg.search.restarts = int(args.restarts)
    if getattr(args, "out", None) is not None:
        cfg.output.dir = str(args.out)
    if getattr(args, "format", None) is not None:
        cfg.output.format = args.format
    cfg.validate()
    return cfg


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")
    return out


def _snap(cfg: RunConfig, out: Path, stem: str, labels: LabelField) -> str:
    name = stem + EXTENSIONS[cfg.output.format]
    export_labels(labels, out / name, cfg.output.format)
    return name


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _initial_state(cfg: RunConfig):
    """Starting labels and volume targets: a snapshot or a fresh random foam."""
    geom = cfg.geom()
    kernel = Kernel(geom, cfg.tau)
    if cfg.initial:
        labels = import_labels(cfg.initial)
        if labels.geom.dims != geom.dims:
            raise ConfigurationError("initial snapshot does not match the configured grid")
        labels = LabelField(geom, labels.labels, labels.n_phases)
        if cfg.volumes:
            targets = cfg.targets()
            if targets.n_phases != labels.n_phases:
                raise ConfigurationError("volume list does not match the snapshot's bubbles")
        else:
            targets = VolumeTargets(tuple(int(c) for c in labels.counts()))
        return labels, targets, kernel
    targets = cfg.targets()
    spec = SeedSpec(len(cfg.volumes), targets, rng_seed=cfg.seed.rng_seed, inner_box=cfg.seed.inner_box)
    labels = random_voronoi_init(geom, spec, kernel, cfg.sim_params().auction)
    return labels, targets, kernel


# -- commands


def cmd_evolve(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    params = cfg.sim_params()
    labels, targets, kernel = _initial_state(cfg)
    snapshots = {"initial": _snap(cfg, out, "initial", labels)}
    every = cfg.output.snapshot_every

    def keep(it, state, trace):
        if every and it % every == 0:
            snapshots[f"iter_{it:05d}"] = _snap(cfg, out, f"iter_{it:05d}", state)

    t0 = time.perf_counter()
    final, trace, converged = evolve(labels, kernel, targets, params, callback=keep)
    logger.info("evolve: %d iterations in %.1f s, converged=%s", len(trace), time.perf_counter() - t0, converged)
    snapshots["final"] = _snap(cfg, out, "final", final)
    write_trace_csv(trace, final.n_phases, out / "trace.csv")
    _write_json(
        out / "summary.json",
        {
            "converged": converged,
            "cycle_detected": trace.cycle_detected,
            "iterations": len(trace),
            "final_energy": float(trace.records[-1].energy),
            "rng_seed": cfg.seed.rng_seed,
            "rng_algorithm": cfg.seed.rng_algorithm,
            "small_bubbles": trace.small_bubbles,
            "snapshots": snapshots,
            "volume_cells": [int(c) for c in targets.counts],
        },
    )
    return EXIT_OK if converged else EXIT_NONCONVERGED


def restart_seeds(base: int, n: int) -> list[int]:
    return [int(base) + k for k in range(n)]


def cmd_search(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    geom = cfg.geom()
    kernel = Kernel(geom, cfg.tau)
    seeds = restart_seeds(cfg.seed.rng_seed, cfg.search.restarts)
    t0 = time.perf_counter()
    results, unconverged = multi_restart_search(
        geom,
        cfg.targets(),
        cfg.search.restarts,
        kernel,
        cfg.sim_params(),
        seeds,
        inner_box=cfg.seed.inner_box,
        energy_tol=cfg.search.energy_tol,
        overlap_tol=cfg.search.overlap_tol,
    )
    logger.info("search: %d restarts in %.1f s", len(seeds), time.perf_counter() - t0)
    rows = []
    for rank, res in enumerate(results, start=1):
        name = _snap(cfg, out, f"rank_{rank:03d}", res.labels)
        rows.append(
            {
                "rank": rank,
                "energy": res.energy,
                "seed": res.seed,
                "hits": res.hits,
                "iterations": res.iterations,
                "interior_bubbles": analysis.interior_bubble_count(res.labels),
                "seeds": ";".join(str(s) for s in res.seeds),
                "snapshot": name,
            }
        )
    with open(out / "search.csv", "w", newline="") as fh:
        fields = ["rank", "energy", "seed", "hits", "iterations", "interior_bubbles", "seeds", "snapshot"]
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({**row, "energy": repr(float(row["energy"]))})
    _write_json(
        out / "summary.json",
        {
            "restarts": len(seeds),
            "seeds": seeds,
            "unconverged": unconverged,
            "configurations": len(results),
            "rng_algorithm": cfg.seed.rng_algorithm,
        },
    )
    return EXIT_OK if results else EXIT_NONCONVERGED


def resolve_target(labels: LabelField, target) -> int:
    if isinstance(target, int):
        if not 1 <= target < labels.n_phases:
            raise ConfigurationError(f"ramp target {target} is not a bubble")
        return target
    adj = analysis.face_adjacency(labels)
    touching = adj.get(labels.complement, set())
    bubbles = range(1, labels.n_phases)
    if target == "interior":
        hits = [i for i in bubbles if i not in touching]
    elif target == "border":
        hits = [i for i in bubbles if i in touching]
    else:
        raise ConfigurationError(f"ramp target must be a bubble id, 'interior' or 'border', not {target!r}")
    if not hits:
        raise ConfigurationError(f"no {target} bubble in the initial configuration")
    return hits[0]


def build_schedule(cfg: RunConfig, labels: LabelField) -> FlowSchedule:
    flow = cfg.flow
    cv = labels.geom.cell_volume
    target = resolve_target(labels, flow.target)
    return FlowSchedule(
        target_phase=target,
        dV=to_cells(flow.dV, cv),
        v_start=to_cells(flow.v_start, cv),
        v_end=to_cells(flow.v_end, cv),
        direction=flow.direction,
        insertions=tuple(InsertionEvent(tuple(e.position), to_cells(e.volume, cv), e.where) for e in flow.insertions),
    )


def cmd_ramp(cfg: RunConfig) -> int:
    if cfg.flow is None:
        raise ConfigurationError("ramp needs a 'flow' section")
    out = _prepare_out(cfg)
    params = cfg.sim_params()
    labels, targets, kernel = _initial_state(cfg)
    start, trace, converged = evolve(labels, kernel, targets, params)
    if not converged:
        raise ConvergenceError("initial relaxation did not reach a stationary state")
    _snap(cfg, out, "start", start)
    schedule = build_schedule(cfg, start)
    logger.info("ramp: bubble %d, %d -> %d cells in steps of %d", schedule.target_phase, schedule.v_start, schedule.v_end, schedule.dV)

    def on_leg(rec, state):
        if cfg.output.ramp_snapshots:
            rec.snapshot_ref = _snap(cfg, out, f"leg_{rec.leg:04d}", state)

    records = quasi_static_ramp(
        start,
        schedule,
        kernel,
        params,
        on_nonconverged=cfg.flow.on_nonconverged,
        on_leg=on_leg,
        change_factor=cfg.flow.change_factor,
        jump_factor=cfg.flow.jump_factor,
    )
    write_ramp_csv(records, out / "ramp.csv")
    _write_json(
        out / "summary.json",
        {
            "target_phase": schedule.target_phase,
            "dV_cells": schedule.dV,
            "v_start_cells": schedule.v_start,
            "v_end_cells": schedule.v_end,
            "legs": len(records),
            "unconverged_legs": [r.leg for r in records if not r.converged],
            "transitions": [r.leg for r in records if r.transition],
            "segments": sorted({r.segment for r in records}),
            "rng_seed": cfg.seed.rng_seed,
            "rng_algorithm": cfg.seed.rng_algorithm,
        },
    )
    return EXIT_OK


def analyze_labels(labels: LabelField, tau: float) -> dict:
    kernel = Kernel(labels.geom, tau)
    rep = total_energy(labels, kernel)
    report = {
        "dims": list(labels.geom.dims),
        "spacing": list(labels.geom.spacing),
        "n_phases": labels.n_phases,
        "volumes": [float(v) for v in labels.volumes()],
        "kernel_energy": rep.total,
        "kernel_perimeter": rep.perimeter_estimate,
        "tau": tau,
        "interior_bubbles": analysis.interior_bubble_count(labels),
    }
    if labels.geom.ndim == 2:
        ifs = analysis.extract_interfaces_2d(labels)
        per_pair, total = analysis.geometric_perimeter(labels, ifs)
        junctions = analysis.junction_angles_2d(ifs)
        angles = junctions.all_angles()
        report["geometric_perimeter"] = total
        report["pair_lengths"] = {f"{i}-{j}": v for (i, j), v in sorted(per_pair.items())}
        report["junctions"] = [
            {"point": [float(x) for x in j.point], "phases": list(j.phases), "angles": [float(a) for a in j.angles], "flagged": j.flagged}
            for j in junctions.junctions
        ]
        report["max_angle_deviation"] = float(np.max(np.abs(angles - 120.0))) if angles.size else None
        report["curvatures"] = {
            f"{i}-{j}": [c.fit.curvature if c.fit is not None else None for c in chains]
            for (i, j), chains in sorted(ifs.chains.items())
        }
    else:
        plateau = analysis.plateau_border_angles_3d(labels)
        report["dihedral"] = _stats(plateau.dihedral)
        report["vertex_tangent"] = _stats(plateau.vertex_tangent)
        report["n_vertices"] = plateau.n_vertices
        report["plateau_flagged"] = plateau.flagged
        report["plateau_params"] = plateau.params
    return report


def _stats(s: analysis.AngleStats) -> dict:
    # JSON has no NaN; empty statistics become nulls
    def clean(x):
        return None if x != x else float(x)

    return {"count": s.count, "mean": clean(s.mean), "std": clean(s.std), "min": clean(s.min), "max": clean(s.max)}


def cmd_analyze(snapshot, out, tau: float | None, cfg: RunConfig | None = None) -> int:
    labels = import_labels(snapshot)
    if cfg is not None:
        # plain graymaps carry no spacing; the run's grid supplies it
        if cfg.geom().dims != labels.geom.dims:
            raise ConfigurationError("snapshot does not match the configured grid")
        labels = LabelField(cfg.geom(), labels.labels, labels.n_phases)
        tau = cfg.tau if tau is None else tau
    tau = 0.0625 if tau is None else tau
    report = analyze_labels(labels, tau)
    text = json.dumps(report, indent=2, sort_keys=True, default=float) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / "analysis.json").write_text(text)
    return EXIT_OK


def cmd_export(snapshot, out, fmt: str) -> int:
    labels = import_labels(snapshot)
    target = Path(out) if out else Path(snapshot).with_suffix(EXTENSIONS[fmt])
    export_labels(labels, target, fmt)
    return EXIT_OK


# -- argument parsing


def _run_options(p: argparse.ArgumentParser, restarts: bool = False) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", help="named preset configuration")
    p.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=FORMATS, help="snapshot format")
    if restarts:
        p.add_argument("--restarts", type=int, help="number of random restarts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foamlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _run_options(sub.add_parser("evolve", help="relax one random foam to a stationary state"))
    _run_options(sub.add_parser("search", help="rank stationary states over random restarts"), restarts=True)
    _run_options(sub.add_parser("ramp", help="quasi-static volume ramp of one bubble"))
    p = sub.add_parser("analyze", help="geometric report of a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--out", help="directory for analysis.json (default: stdout)")
    p.add_argument("--tau", type=float, help="kernel parameter for the energy (default: config value or 0.0625)")
    p.add_argument("--config", help="run configuration supplying grid spacing and tau")
    p.add_argument("--preset", help="preset supplying grid spacing and tau")
    p = sub.add_parser("export", help="convert a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--format", choices=FORMATS, required=True)
    p.add_argument("--out", help="output file")
    p = sub.add_parser("config", help="print the fully expanded configuration")
    p.add_argument("--config")
    p.add_argument("--preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=FORMATS)
    sub.add_parser("presets", help="list preset names")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            print("\n".join(preset_names()))
            return EXIT_OK
        if args.command == "analyze":
            cfg = None
            if args.config or args.preset:
                cfg = load_config(args.config) if args.config else preset(args.preset)
            return cmd_analyze(args.snapshot, args.out, args.tau, cfg)
        if args.command == "export":
            return cmd_export(args.snapshot, args.out, args.format)
        cfg = resolve_config(args)
        if args.command == "config":
            sys.stdout.write(dumps_config(cfg))
            return EXIT_OK
        return {"evolve": cmd_evolve, "search": cmd_search, "ramp": cmd_ramp}[args.command](cfg)
    except (ConfigurationError, ParameterError, InfeasibleRampError, InsertionError) as exc:
        print(f"foamlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, AuctionError) as exc:
        print(f"foamlab: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except OSError as exc:
        print(f"foamlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
