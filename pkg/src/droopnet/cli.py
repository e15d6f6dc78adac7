"""Command line front end: ``droopnet run|compare|certify|oracle <scenario>``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import NumericalError, ValidationError
from .experiment import certify, compare, load_scenario, oracle, run

log = logging.getLogger("droopnet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="droopnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sim=True):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--out", default=None, help="output directory (env DROOPNET_OUT wins)")
        sp.add_argument("--seed", type=int, default=None, help="seed for random initial states")
        if sim:
            sp.add_argument("--dt", type=float, default=None, help="override the integration step")

    common(sub.add_parser("run", help="simulate the scenario's controller"))
    common(sub.add_parser("compare", help="projection-based vs projection-free runs"))
    common(sub.add_parser("certify", help="rate certificate, rho window, edge advice"), sim=False)
    common(sub.add_parser("oracle", help="KKT points of every load segment"), sim=False)
    return p


def _summary(cmd, result) -> dict:
    if cmd == "run":
        return {k: result.to_dict()[k] for k in (
            "trajectory_path", "active_lo", "active_hi", "omega_s_measured",
            "omega_s_formula", "beta_hat", "settling_times", "wall_time")}
    if cmd == "compare":
        return {k: {"settling_times": v["settling_times"], "active_hi": v["active_hi"],
                    "active_lo": v["active_lo"]} for k, v in result.items()}
    if cmd == "certify":
        c = result["certificate"]
        return {"beta": c["beta"], "binding": c["binding"], "rho_window": result["rho_window"]}
    return {"segments": [{"t_start": s["t_start"], "P_MW": s["P_MW"],
                          "omega_s": s["omega_s"]} for s in result["segments"]]}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        sc = load_scenario(args.scenario)
        if args.command == "run":
            result = run(sc, out=args.out, dt=args.dt, seed=args.seed)
        elif args.command == "compare":
            result = compare(sc, out=args.out, dt=args.dt, seed=args.seed)
        elif args.command == "certify":
            result = certify(sc, out=args.out, seed=args.seed)
        else:
            result = oracle(sc, out=args.out)
    except (ValidationError, FileNotFoundError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_INVALID
    except NumericalError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    print(json.dumps(_summary(args.command, result), indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
