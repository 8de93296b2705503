"""Command-line entry point: ``banditpack <command> [flags]``.

Exit codes: 0 success, 2 usage or unreadable input, 3 unreachable cv,
4 solver failure, 5 instance too large for the exact oracle.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bench
from .errors import BanditError, DomainError, InfeasibleCV, InstanceTooLarge
from .instance import BanditInstance
from .oracle import exact_optimal_value
from .packing import simulate
from .relaxation import RelaxedSolution, solve_rlp

EXIT_OK, EXIT_USAGE, EXIT_CV, EXIT_SOLVER, EXIT_CAP = 0, 2, 3, 4, 5

log = logging.getLogger("banditpack")


class UsageError(Exception):
    pass


def default_threads() -> int:
    env = os.environ.get("BANDITPACK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"BANDITPACK_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _existing(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return p


def _emit(obj: dict, out: Path | None) -> None:
    text = json.dumps(obj, indent=1)
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n")


def _load_instance(path: Path) -> BanditInstance:
    try:
        return BanditInstance.load(path)
    except (OSError, json.JSONDecodeError, KeyError, DomainError) as exc:
        raise UsageError(f"cannot read instance {path}: {exc}") from exc


def cmd_generate(args) -> int:
    try:
        cfg = bench.GenerativeConfig(n=args.n, k=args.k, T=args.T, cv=args.cv,
                                     groups=args.groups, m=args.m)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    inst = bench.generate_instance(cfg, args.seed)
    inst.save(args.out)
    print(f"wrote {inst.n} coin arms (k={inst.budget_k}, T={inst.horizon}) to {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = _load_instance(args.instance)
    try:
        sol = solve_rlp(inst.arms, inst.budget_k, inst.horizon, args.epsilon)
    except BanditError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _emit(sol.to_dict(), args.out)
    if args.out is not None:
        print(f"value {sol.total_reward:.6g}, dual bound {sol.dual_value:.6g}, alpha {sol.alpha_blend:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    inst = _load_instance(args.instance)
    try:
        data = json.loads(args.solution.read_text())
        sol = RelaxedSolution.from_dict(data, inst.arms)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read solution {args.solution}: {exc}") from exc
    summ = simulate(inst.arms, sol, inst.budget_k, inst.horizon, args.trajectories,
                    seed=args.seed, workers=args.threads, log_path=args.log)
    _emit(summ.to_dict(), None)
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = _load_instance(args.instance)
    try:
        j = exact_optimal_value(inst.arms, inst.budget_k, inst.horizon)
    except InstanceTooLarge as exc:
        print(f"instance too large: {exc}", file=sys.stderr)
        return EXIT_CAP
    _emit({"j_star": j}, None)
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = {"base_seed": args.seed}
    if args.instances is not None:
        overrides["instances"] = args.instances
    if args.trajectories is not None:
        overrides["trajectories"] = args.trajectories
    reports = []
    for cfg in bench.preset(args.preset, **overrides):
        rep = bench.run_bench(cfg, workers=args.threads)
        reports.append(rep)
        s = rep.summary()
        print(f"cv={s['cv']} n={s['n']} k={s['k']} T={s['T']}: "
              f"ratio {s['aggregate_ratio']:.4f} +/- {s['ci98_half_width']:.4f}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_rows_csv(reports, out / f"{args.preset}.csv")
    bench.write_aggregate(reports, out / f"{args.preset}.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="banditpack",
                                description="Irrevocable packing heuristic for multi-pull bandits.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker processes (default: BANDITPACK_THREADS or CPU count)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="draw a generative coin instance")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--k", type=_positive_int, required=True)
    g.add_argument("--T", type=_positive_int, required=True)
    g.add_argument("--cv", type=_positive_float, required=True)
    g.add_argument("--groups", type=_positive_int, default=10)
    g.add_argument("--m", type=_positive_int, default=2)
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", parents=[common], help="solve the relaxation")
    s.add_argument("--instance", type=_existing, required=True)
    s.add_argument("--epsilon", type=_positive_float, default=1e-3)
    s.add_argument("--out", type=Path, default=None)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo run of the packing heuristic")
    m.add_argument("--instance", type=_existing, required=True)
    m.add_argument("--solution", type=_existing, required=True)
    m.add_argument("--trajectories", type=_positive_int, default=1000)
    m.add_argument("--seed", type=_seed, default=0)
    m.add_argument("--log", type=Path, default=None, help="CSV log of trajectory 0")
    m.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", parents=[common], help="exact optimum of a tiny instance")
    o.add_argument("--instance", type=_existing, required=True)
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bench", parents=[common], help="run a benchmark preset")
    b.add_argument("--preset", choices=sorted(bench.PRESETS), default="table1-small")
    b.add_argument("--instances", type=_positive_int, default=None)
    b.add_argument("--trajectories", type=_positive_int, default=None)
    b.add_argument("--seed", type=_seed, default=0)
    b.add_argument("--out-dir", default=".")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is None:
            args.threads = default_threads()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleCV as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CV
    except InstanceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except BanditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
