"""Command-line front end: generate, solve, bench and verify."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import statistics
import sys
import time

import numpy as np

from . import fuzz
from .bellman import bellman
from .domains import make_cartpole, make_inventory, value_based_weights
from .errors import MaxIterExceeded, RmdpError, SolverError
from .model import AmbiguityConfig, load_model, save_model
from .oracle import lp_bellman
from .solvers import SOLVERS, SolverConfig, nominal_optimal, solve

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
BENCH_COLUMNS = ("problem", "kind", "weights", "S", "A", "algorithm", "seconds",
                 "iterations", "residual", "termination")


class UsageError(Exception):
    pass


def _csv_list(text, cast=str):
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [cast(t) for t in items]
    except ValueError as exc:
        raise UsageError(str(exc))


def _set_threads(n):
    if n is None:
        return
    import numba
    if not 1 <= n <= numba.config.NUMBA_NUM_THREADS:
        raise UsageError(f"--threads must be between 1 and {numba.config.NUMBA_NUM_THREADS}")
    numba.set_num_threads(n)


def build_domain(domain, size, seed=0, samples=None):
    if domain == "inventory":
        return make_inventory(size)
    if domain == "cartpole":
        return make_cartpole(size, samples or 20 * size, seed)
    raise UsageError(f"unknown domain '{domain}'")


def build_ambiguity(model, kind, budget, weights="uniform", restricted=True):
    if weights == "uniform":
        w = None
    elif weights == "value":
        w = value_based_weights(nominal_optimal(model)[0])
    else:
        raise UsageError(f"unknown weight scheme '{weights}'")
    return AmbiguityConfig.uniform(model, kind, budget, w, restricted)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args):
    model = build_domain(args.domain, args.size, args.seed, args.samples)
    amb = build_ambiguity(model, args.rectangularity, args.budget, args.weights,
                          not args.unrestricted)
    save_model(model, amb, args.model, args.config)
    print(f"wrote {args.model} and {args.config}: {model.n_states} states, "
          f"{model.n_rows} state-action pairs, {model.nnz} transitions")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def write_solution(model, value, policy, value_path, policy_path):
    with open(value_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["idstate", "value"])
        for s in range(model.n_states):
            wr.writerow([model.state_ids[s], repr(float(value[s]))])
    rs = model.row_state()
    with open(policy_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["idstate", "idaction", "probability"])
        for r in range(model.n_rows):
            if policy[r] > 0:
                wr.writerow([model.state_ids[rs[r]], model.action_ids[r],
                             repr(float(policy[r]))])


def cmd_solve(args):
    model, amb = load_model(args.model, args.config)
    if args.algorithm == "rmpi" and amb.kind != "sa":
        raise UsageError("rmpi supports sa-rectangular models only")
    cfg = SolverConfig(delta=args.delta, max_iterations=args.max_iterations,
                       inner_method=args.inner, rmpi_eval_sweeps=args.rmpi_sweeps)
    status = EXIT_OK
    try:
        res = solve(model, amb, args.algorithm, cfg)
    except MaxIterExceeded as exc:
        res = exc.result
        status = EXIT_FAIL
        print(f"warning: {exc}", file=sys.stderr)
    write_solution(model, res.value, res.policy, args.value_out, args.policy_out)
    print(f"algorithm={args.algorithm} iterations={len(res.iterations)} "
          f"residual={res.residual:.3e} seconds={res.seconds:.3f} "
          f"return={float(model.initial @ res.value):.6f} termination={res.termination}")
    return status


# ---------------------------------------------------------------------------
# bench


def _median_time(fn, repeats):
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _sweeps_homotopy(model, amb, n):
    v = np.zeros(model.n_states)
    res = float("nan")
    for _ in range(n):
        lv, _ = bellman(model, amb, v)
        res = float(np.max(np.abs(lv - v)))
        v = lv
    return res


def _sweeps_lp(model, amb, n, sample):
    """LP sweeps; with sample > 0 only that many states are solved per sweep
    and the time is scaled to the full state count."""
    S = model.n_states
    states = np.arange(S) if sample <= 0 or sample >= S else \
        np.unique(np.linspace(0, S - 1, sample).astype(int))
    v = np.zeros(S)
    res = float("nan")
    for _ in range(n):
        vals = lp_bellman(model, amb, v, states)
        if states.size == S:
            res = float(np.max(np.abs(vals - v)))
            v = vals
        else:
            # keep the homotopy iterate so every sweep sees realistic values
            lv, _ = bellman(model, amb, v)
            res = float(np.max(np.abs(lv - v)))
            v = lv
    return res, S / states.size


def bench_rows(args):
    domains = _csv_list(args.domain)
    sizes = _csv_list(args.sizes, int)
    kinds = _csv_list(args.rectangularity)
    schemes = _csv_list(args.weights)
    methods = _csv_list(args.operators if args.mode == "sweeps" else args.algorithms)
    grid = [(d, n, k, w, m) for d in domains for n in sizes for k in kinds
            for w in schemes for m in methods]
    if not grid:
        raise UsageError("the benchmark grid is empty")
    for m in methods:
        known = ("homotopy", "lp") if args.mode == "sweeps" else tuple(SOLVERS)
        if m not in known:
            raise UsageError(f"unknown {'operator' if args.mode == 'sweeps' else 'algorithm'} '{m}'")
    rows = []
    cache = {}
    for d, n, k, w, m in grid:
        if m == "rmpi" and k != "sa":
            continue
        if (d, n) not in cache:
            cache[(d, n)] = build_domain(d, n, args.seed, args.samples)
        model = cache[(d, n)]
        amb = build_ambiguity(model, k, args.budget, w)
        row = dict(problem=f"{d}-{n}", kind=k, weights=w, S=model.n_states,
                   A=int(model.n_actions.max()), algorithm=m)
        if args.mode == "sweeps":
            if m == "homotopy":
                bellman(model, amb, np.zeros(model.n_states))   # compile outside timing
                sec, res = _median_time(lambda: _sweeps_homotopy(model, amb, args.sweeps),
                                        args.repeats)
                term = "sweeps"
            else:
                n_lp = min(args.sweeps, args.lp_sweeps) if args.lp_sweeps > 0 else args.sweeps
                sec, (res, factor) = _median_time(
                    lambda: _sweeps_lp(model, amb, n_lp, args.lp_sample), args.repeats)
                sec *= factor * args.sweeps / n_lp
                term = "sweeps" if factor == 1 and n_lp == args.sweeps else "extrapolated"
            row.update(seconds=sec, iterations=args.sweeps, residual=res, termination=term)
        else:
            cfg = SolverConfig(delta=args.delta, max_iterations=args.max_iterations)
            sec, out = _median_time(lambda: solve(model, amb, m, cfg, strict=False),
                                    args.repeats)
            row.update(seconds=sec, iterations=len(out.iterations), residual=out.residual,
                       termination=out.termination,
                       **{"return": float(model.initial @ out.value)})
        rows.append(row)
    return rows


def format_table(rows, columns):
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)
    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(x[i]) for x in cells)) if cells else len(c)
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(wd) for c, wd in zip(columns, widths))]
    lines += ["  ".join(x.rjust(wd) for x, wd in zip(cell, widths)) for cell in cells]
    return "\n".join(lines)


def cmd_bench(args):
    _set_threads(args.threads)
    rows = bench_rows(args)
    cols = BENCH_COLUMNS + (("return",) if args.mode == "solve" else ())
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            wr.writeheader()
            wr.writerows(rows)
    print(format_table(rows, cols))
    return EXIT_FAIL if any(r["termination"] == "max_iterations" for r in rows) else EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _print_failures(failures, limit=5):
    for f in failures[:limit]:
        print(f"  {f}")
    if len(failures) > limit:
        print(f"  ... {len(failures) - limit} more")


def _report_failure(out, tol, fault, path):
    record = dict(instance=dataclasses.asdict(out.instance), tol=tol, fault=fault,
                  failures=out.failures)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1)
    print(f"FAIL {out.instance.suite} seed={out.instance.seed}")
    _print_failures(out.failures)
    print(f"counterexample written to {path}")


def cmd_verify(args):
    if args.replay:
        with open(args.replay) as fh:
            record = json.load(fh)
        inst = fuzz.Instance(**record["instance"])
        out = fuzz.check(inst, record["tol"], record["fault"])
        if out.ok:
            print(f"PASS replay of {inst.suite} seed={inst.seed}")
            return EXIT_OK
        print(f"FAIL replay of {inst.suite} seed={inst.seed}")
        _print_failures(out.failures)
        return EXIT_FAIL
    if args.instances < 0 or args.max_states < 2 or args.max_actions < 1:
        raise UsageError("need --instances >= 0, --max-states >= 2, --max-actions >= 1")
    if args.instances == 0:
        print("warning: no instances requested; nothing was checked", file=sys.stderr)
        print("PASS (vacuous)")
        return EXIT_OK
    t0 = time.perf_counter()
    n, failures = fuzz.run(args.instances, args.max_states, args.max_actions, args.seed,
                           args.tol, args.inject_fault)
    if failures:
        _report_failure(failures[0], args.tol, args.inject_fault, args.failure_file)
        return EXIT_FAIL
    print(f"PASS {n} checks ({args.instances} per suite: {', '.join(fuzz.SUITES)}) "
          f"in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="l1rmdp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a benchmark model as CSV + config")
    g.add_argument("--domain", choices=("inventory", "cartpole"), required=True)
    g.add_argument("--size", type=int, required=True,
                   help="inventory capacity I, or the number of cart-pole states")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--samples", type=int, default=None, help="cart-pole samples (20 x size)")
    g.add_argument("--rectangularity", choices=("sa", "s"), default="sa")
    g.add_argument("--budget", type=float, default=0.2)
    g.add_argument("--weights", choices=("uniform", "value"), default="uniform")
    g.add_argument("--unrestricted", action="store_true",
                   help="allow mass outside the nominal support")
    g.add_argument("--model", required=True)
    g.add_argument("--config", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve a model and write value and policy CSVs")
    s.add_argument("--model", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--algorithm", choices=tuple(SOLVERS), default="ppi")
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--max-iterations", type=int, default=100000)
    s.add_argument("--inner", choices=("pi", "mpi", "vi"), default=None,
                   help="policy evaluation method (default: pi up to 1000 states, else mpi)")
    s.add_argument("--rmpi-sweeps", type=int, default=1000)
    s.add_argument("--value-out", default="value.csv")
    s.add_argument("--policy-out", default="policy.csv")
    s.add_argument("--threads", type=int, default=None)
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="time operators or solvers over a grid")
    b.add_argument("--mode", choices=("sweeps", "solve"), default="sweeps")
    b.add_argument("--domain", default="inventory", help="comma list: inventory,cartpole")
    b.add_argument("--sizes", default="30", help="comma list of sizes")
    b.add_argument("--rectangularity", default="sa,s")
    b.add_argument("--weights", default="uniform", help="comma list: uniform,value")
    b.add_argument("--budget", type=float, default=0.2)
    b.add_argument("--sweeps", type=int, default=200)
    b.add_argument("--operators", default="homotopy", help="comma list: homotopy,lp")
    b.add_argument("--lp-sample", type=int, default=0,
                   help="LP states per sweep, time scaled to all states (0 = all)")
    b.add_argument("--lp-sweeps", type=int, default=0,
                   help="LP sweeps actually run, time scaled to --sweeps (0 = all)")
    b.add_argument("--algorithms", default="ppi,vi,rmpi")
    b.add_argument("--delta", type=float, default=0.1)
    b.add_argument("--max-iterations", type=int, default=100000)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--samples", type=int, default=None)
    b.add_argument("--csv", default=None, help="also write the report as CSV")
    b.add_argument("--threads", type=int, default=None)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="differential tests against the LP oracle")
    v.add_argument("--instances", type=int, default=1000, help="instances per suite")
    v.add_argument("--max-states", type=int, default=30)
    v.add_argument("--max-actions", type=int, default=5)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", type=float, default=1e-8)
    v.add_argument("--replay", default=None, help="rerun a serialized counterexample")
    v.add_argument("--inject-fault", action="store_true",
                   help="shift response slopes by one segment (harness self-test)")
    v.add_argument("--failure-file", default="verify_failure.json")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "threads", None) is not None and args.command != "bench":
            _set_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (RmdpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
