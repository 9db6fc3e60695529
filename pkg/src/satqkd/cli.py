"""Command-line entry point: ``satqkd {run,gen-profile,validate}``."""
from __future__ import annotations

import argparse
import sys

from .geometry import OrbitGeometry
from .lossio import LossFileError, generate_synthetic_profile, read_loss_file, system_loss_db, write_loss_file
from .sweep import ConfigError, load_config, run_sweep


def _run(args) -> int:
    cfg = load_config(args.config, args.set)
    run_sweep(cfg)
    return 0


def _gen_profile(args) -> int:
    geom = OrbitGeometry(R_E=args.earth_radius, h_sat=args.h_sat, h_ogs=args.h_ogs, xi=args.xi)
    profile = generate_synthetic_profile(geom, args.zenith_loss, args.slots, args.slot_duration)
    write_loss_file(profile, args.output)
    print(f"wrote {len(profile)} slots to {args.output}")
    return 0


def _validate(args) -> int:
    profile = read_loss_file(args.loss_file, args.lc, in_db=args.db)
    print(f"{args.loss_file}: {len(profile)} slots, slot duration {profile.slot_duration:g} s, "
          f"max elevation {profile.elevation.max():.6g} deg, best-case loss {system_loss_db(profile):.6g} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satqkd", description="Finite-key SKL sweeps for satellite decoy-state BB84.")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a sweep described by a config file")
    r.add_argument("config")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (repeatable)")
    r.set_defaults(func=_run)

    g = sub.add_parser("gen-profile", help="write a synthetic circular-orbit loss file")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--h-sat", type=float, default=500.0, help="satellite altitude (km)")
    g.add_argument("--h-ogs", type=float, default=0.0, help="ground station altitude (km)")
    g.add_argument("--earth-radius", type=float, default=6371.0, help="km")
    g.add_argument("--xi", type=float, default=0.0, help="orbit offset from zenith (deg)")
    g.add_argument("--zenith-loss", type=float, default=30.0, help="loss at closest approach (dB)")
    g.add_argument("--slots", type=int, default=601, help="odd number of time slots")
    g.add_argument("--slot-duration", type=float, default=1.0, help="s")
    g.set_defaults(func=_gen_profile)

    v = sub.add_parser("validate", help="check a loss file")
    v.add_argument("loss_file")
    v.add_argument("--lc", type=int, default=3, help="efficiency column, counting from 1")
    v.add_argument("--db", action="store_true", help="column holds loss in dB")
    v.set_defaults(func=_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LossFileError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
