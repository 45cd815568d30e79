"""Command line entry point: ``hytegrid <poisson|stokes|annulus|partition> [options]``."""
from __future__ import annotations

import argparse
import sys

from ..mesh import MeshError
from ..solvers import LevelError
from .drivers import (
    PARTITIONERS,
    AnnulusConfig,
    ConfigError,
    PartitionConfig,
    PoissonConfig,
    StokesConfig,
    run_annulus,
    run_partition,
    run_poisson,
    run_stokes_channel,
)

EXIT_OK, EXIT_INVALID = 0, 2


def build_parser() -> argparse.ArgumentParser:
    # argparse itself exits with status 2 on bad usage, matching EXIT_INVALID
    p = argparse.ArgumentParser(prog="hytegrid", description="Matrix-free hierarchical hybrid grid demos.")
    p.add_argument("command", choices=("poisson", "stokes", "annulus", "partition"))
    p.add_argument("--mesh", help="mesh file or fixture name (triangle, square, ring, chain, channel, annulus)")
    p.add_argument("--level", type=int, help="refinement level")
    p.add_argument("--ranks", type=int, default=1, help="number of logical ranks")
    p.add_argument("--partitioner", choices=PARTITIONERS, default="rr")
    p.add_argument("--cycles", type=int, help="V-cycles (poisson, stokes) or initial Stokes cycles (annulus)")
    p.add_argument("--ra", type=float, help="Rayleigh number (annulus)")
    p.add_argument("--steps", type=int, help="transport steps (annulus)")
    p.add_argument("--vtk-out", dest="vtk_out", help="directory for VTK output")
    p.add_argument("--kind", choices=("P1", "P2"), help="element kind (poisson)")
    p.add_argument("--inv-pe", dest="inv_pe", type=float, help="inverse Peclet number (annulus)")
    p.add_argument("--initial", help="initial temperature (annulus): layer, conductive or cold")
    p.add_argument("--faces", type=int, help="macro-face count of the generated annulus")
    return p


def make_config(args):
    common = {k: getattr(args, k) for k in ("mesh", "level", "ranks", "partitioner", "cycles", "vtk_out")}
    common = {k: v for k, v in common.items() if v is not None}
    if args.command == "poisson":
        extra = {"kind": args.kind} if args.kind else {}
        return PoissonConfig(**common, **extra)
    if args.command == "stokes":
        return StokesConfig(**common)
    if args.command == "annulus":
        extra = {"Ra": args.ra, "steps": args.steps, "invPe": args.inv_pe,
                 "initial": args.initial, "faces": args.faces}
        return AnnulusConfig(**common, **{k: v for k, v in extra.items() if v is not None})
    return PartitionConfig(**common)


RUNNERS = {PoissonConfig: run_poisson, StokesConfig: run_stokes_channel,
           AnnulusConfig: run_annulus, PartitionConfig: run_partition}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = make_config(args)
    print(f"command={args.command}")
    for key, value in cfg.header().items():
        print(f"{key}={value}")
    try:
        cfg.validate()
    except ConfigError as exc:
        print(f"error={exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = RUNNERS[type(cfg)](cfg)
    except (ConfigError, MeshError, LevelError, OSError) as exc:
        # unreadable or malformed inputs count as validation failures
        print(f"error={exc}", file=sys.stderr)
        return EXIT_INVALID
    for line in report.lines():
        print(line)
    for f in report.files:
        print(f"vtk={f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
