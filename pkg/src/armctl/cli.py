"""Command-line interface.

Verbs: run, compare, replay, teleop, validate. Exit codes: 0 success,
1 run failure, 2 usage/parse error. CRISP_OUT_DIR sets the default output
root for artifacts.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (
    ArmctlError,
    BindError,
    BranchingChain,
    CsvFormatError,
    LimitViolation,
    MalformedXml,
    MissingInertial,
    NonMonotoneTime,
    ScenarioParseError,
    UnsupportedJointType,
)

USAGE_ERROR, RUN_ERROR = 2, 1
_PARSE_ERRORS = (ScenarioParseError, CsvFormatError, NonMonotoneTime, MalformedXml,
                 BranchingChain, MissingInertial, UnsupportedJointType, LimitViolation)


def _add_common(parser, suppress=False):
    # the common flags are accepted both before and after the verb; the
    # after-verb copies use SUPPRESS so an absent flag keeps the global value
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--out", default=default, help="output directory root "
                        "(default: $CRISP_OUT_DIR or ./out)")
    parser.add_argument("--seed", type=int, default=default,
                        help="override scenario seed")
    parser.add_argument("--quiet", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="armctl",
                                     description="Compliant torque control harness")
    _add_common(parser)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")

    p_cmp = sub.add_parser("compare", help="run several scenarios over one model")
    p_cmp.add_argument("scenarios", nargs="+")

    p_rep = sub.add_parser("replay", help="replay a recorded pose-target CSV")
    p_rep.add_argument("csv")
    p_rep.add_argument("scenario")

    p_tel = sub.add_parser("teleop", help="serve a live sim over the wire protocol")
    p_tel.add_argument("scenario")
    p_tel.add_argument("--bind", default="127.0.0.1:7465", metavar="HOST:PORT")
    p_tel.add_argument("--state-rate", type=float, default=30.0, metavar="HZ")
    p_tel.add_argument("--fast", action="store_true",
                       help="run unthrottled instead of pacing to the wall clock")

    p_val = sub.add_parser("validate", help="parse and summarize a URDF file")
    p_val.add_argument("urdf")
    for p in (p_run, p_cmp, p_rep, p_tel, p_val):
        _add_common(p, suppress=True)
    return parser


def _resolve_scenario(ref: str):
    from pathlib import Path

    from .harness import bundled_scenario

    path = Path(ref)
    if path.exists():
        return path
    bundled = bundled_scenario(ref)
    if bundled.is_file():
        return bundled
    raise ScenarioParseError(f"scenario not found: {ref}")


def _cmd_run(args) -> int:
    from .harness import run_scenario

    run_scenario(_resolve_scenario(args.scenario), out_dir=args.out,
                 seed=args.seed, quiet=args.quiet)
    return 0


def _cmd_compare(args) -> int:
    from .harness import compare

    compare([_resolve_scenario(s) for s in args.scenarios], out_dir=args.out,
            seed=args.seed, quiet=args.quiet)
    return 0


def _cmd_replay(args) -> int:
    from .harness import replay_policy_stream

    replay_policy_stream(args.csv, _resolve_scenario(args.scenario),
                         out_dir=args.out, seed=args.seed, quiet=args.quiet)
    return 0


def _cmd_teleop(args) -> int:
    from .harness import Scenario
    from .teleop import SimSession, TeleopServer

    scenario = Scenario.load(_resolve_scenario(args.scenario))
    host, _, port = args.bind.rpartition(":")
    try:
        bind = (host or "127.0.0.1", int(port))
    except ValueError as exc:
        raise ScenarioParseError(f"bad --bind {args.bind!r}") from exc
    session = SimSession(scenario.model, scenario.params, scenario.sim,
                         q0=scenario.initial_q)
    server = TeleopServer(session, bind=bind, state_rate=args.state_rate,
                          realtime=not args.fast)
    server.start()
    if not args.quiet:
        host, port = server.address
        print(f"serving {scenario.name} on {host}:{port} "
              f"(state rate {args.state_rate:g} Hz); Ctrl-C to stop")
    try:
        while True:
            import time

            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _cmd_validate(args) -> int:
    from pathlib import Path

    from .urdf import parse_urdf

    path = Path(args.urdf)
    if not path.exists():
        raise ScenarioParseError(f"URDF file not found: {path}")
    model = parse_urdf(path.read_text())
    print(f"{path.name}: serial chain {model.base_link} -> {model.tip_link}")
    print(f"  dof: {model.dof} ({len(model.joints)} joints incl. fixed)")
    print(f"  links: {', '.join(model.link_names)}")
    print(f"  total mass: {model.total_mass():.6g} kg")
    for joint in model.joints:
        if joint.is_actuated:
            print(f"  {joint.name}: {joint.kind}, range [{joint.limit_lower:g}, "
                  f"{joint.limit_upper:g}], effort {joint.effort_limit:g}, "
                  f"velocity {joint.velocity_limit:g}")
    return 0


_DISPATCH = {
    "run": _cmd_run,
    "compare": _cmd_compare,
    "replay": _cmd_replay,
    "teleop": _cmd_teleop,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return _DISPATCH[args.verb](args)
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except BindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUN_ERROR
    except ArmctlError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
