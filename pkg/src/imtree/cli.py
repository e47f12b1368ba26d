"""Command-line driver: tree tables, projections, MI curves, BLER curves, optimization.

Every command writes CSV (header row, '.' decimals) followed by one ``#``
metadata line holding the invocation, seed, thread count and version.  No
timestamps are written, so identical invocations give identical files.
Exit status: 0 on success, 2 on bad input, 3 when a result is partial.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import shlex
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ChannelState, SystemConfig, exp_decay_gains, load_channel_state
from .link_sim import MODES, Constellation, run_bler
from .mapping import METRICS, codebook_from_probabilities, project_to_feasible
from .optimize import (
    OBJECTIVES,
    bcd_optimize,
    benchmark_scheme,
    solve_constrained_enumerative,
    solve_constrained_projected,
)
from .rates import (
    MIN_MC_SAMPLES,
    SingularMatrixError,
    allocate_powers_per_sap,
    high_snr_probs,
    jensen_lower_bound,
    jensen_optimal_probs,
    low_snr_probs,
    mi_monte_carlo,
    upper_bound_mu,
)
from .trees import loose_bound, catalan, reduced_set_sizes, tight_bound_recurrence

log = logging.getLogger("imtree")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 2, 3
TREES_GUARD = 20
CLOSED_FORM_METHODS = ("jensen", "upper")
MC_METHODS = (
    "mc", "jensen_opt", "high_snr", "low_snr", "enumerative",
    "projected_euclidean", "projected_kl", "projected_tv", "benchmark",
)
METHODS = CLOSED_FORM_METHODS + MC_METHODS
PARTIAL_FLAGS = {"partial", "not_converged"}


class UsageError(Exception):
    pass


def parse_grid(text: str) -> list[float]:
    """``start:step:stop`` in dB, stop included when it lands on the grid; or a single value."""
    parts = text.split(":")
    try:
        vals = [float(x) for x in parts]
    except ValueError:
        raise UsageError(f"bad SNR grid {text!r}") from None
    if len(vals) == 1:
        return vals
    if len(vals) != 3 or vals[1] == 0:
        raise UsageError(f"SNR grid must be start:step:stop with nonzero step, got {text!r}")
    start, step, stop = vals
    count = math.floor((stop - start) / step + 1e-9) + 1
    if count < 1:
        raise UsageError(f"SNR grid {text!r} is empty")
    return [round(start + k * step, 10) for k in range(count)]


def parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise UsageError(f"malformed number list {text!r}") from None


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class Table:
    def __init__(self, header):
        self.buf = io.StringIO()
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.writer.writerow(header)
        self.partial = False

    def row(self, *values):
        self.writer.writerow([fmt(v) for v in values])

    def finish(self, args, extra: str = "") -> str:
        meta = (
            f"# imtree {__version__}; invocation: {shlex.join(['imtree', *args.argv])}; "
            f"seed={getattr(args, 'seed', 'none')}; threads={getattr(args, 'threads', 1)}"
        )
        return self.buf.getvalue() + extra + meta + "\n"


def emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def base_gains(args) -> tuple[np.ndarray, np.ndarray | None, float]:
    if getattr(args, "channel", None):
        st = load_channel_state(args.channel)
        if st.N != args.n:
            raise UsageError(f"channel file has {st.N} subcarriers, --n is {args.n}")
        return st.gains, st.phases, st.noise_var
    if args.gains:
        g = np.asarray(parse_floats(args.gains))
        if g.size != args.n:
            raise UsageError(f"--gains has {g.size} entries, --n is {args.n}")
        return g, None, 1.0
    return exp_decay_gains(args.n, args.eta), None, 1.0


def system(args) -> SystemConfig:
    try:
        return SystemConfig(args.n, args.k, allow_full=args.k == args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# trees
# ---------------------------------------------------------------------------


def cmd_trees(v_max: int, force: bool = False) -> list[tuple[int, int, int, int, int]]:
    """Rows ``(v, T_v, loose_bound, tight_bound, catalan)`` for ``v = 1..v_max``."""
    if v_max < 1:
        raise UsageError("v_max must be at least 1")
    if v_max > TREES_GUARD and not force:
        raise UsageError(f"v_max above {TREES_GUARD} needs --force")
    sizes = reduced_set_sizes(v_max)
    tight = tight_bound_recurrence(v_max)
    return [(v, sizes[v - 1], loose_bound(v), tight[v - 1], catalan(v)) for v in range(1, v_max + 1)]


def run_trees(args) -> int:
    t = Table(["v", "T_v", "loose_bound", "tight_bound", "catalan"])
    for r in cmd_trees(args.v_max, args.force):
        t.row(*r)
    emit(t.finish(args), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# project
# ---------------------------------------------------------------------------


def cmd_project(probs, metric: str):
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1) > 1e-6:
        raise UsageError("probabilities must be nonnegative and sum to 1")
    return project_to_feasible(p / p.sum(), metric)


def _fractions(vec) -> str:
    return " ".join(str(Fraction(x).limit_denominator(1 << 62)) for x in vec.to_list())


def run_project(args) -> int:
    proj = cmd_project(parse_floats(args.probs), args.metric)
    t = Table(["k", "probabilities", "distance", "winner"])
    for c in proj.candidates:
        t.row(c.k, _fractions(c.vector), c.distance, int(c.k == proj.best_k))
    book = codebook_from_probabilities(proj.best)
    codes = "; ".join(f"sap {s + 1}: {c or '-'}" for s, c in sorted(book.entries))
    extra = f"# winner k={proj.best_k} metric={args.metric}: {_fractions(proj.best)}; codebook {codes}\n"
    emit(t.finish(args, extra), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# mi-curve
# ---------------------------------------------------------------------------


def _need_samples(method: str, samples: int):
    if samples < MIN_MC_SAMPLES:
        raise UsageError(f"method {method!r} needs --samples >= {MIN_MC_SAMPLES}")


def mi_point(method: str, state: ChannelState, config: SystemConfig, samples: int, seed: int,
             partitions: int, objective: str = "auto") -> tuple[float, float, str]:
    """``(mi_nats, std_err, flag)`` for one method at one channel state."""
    catalog = config.catalog()
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    rho = allocate_powers_per_sap(catalog, state)
    if method == "upper":
        return upper_bound_mu(rho, catalog, state), 0.0, ""
    if method == "jensen":
        try:
            p = jensen_optimal_probs(rho, catalog, state)
            flag = ""
        except SingularMatrixError:
            p, flag = high_snr_probs(rho, catalog, state), "singular_fallback"
        return jensen_lower_bound(p, rho, catalog, state), 0.0, flag
    _need_samples(method, samples)
    flag = ""
    if method == "mc":
        # all patterns, equal probability and equal power
        p = np.full(config.C, 1.0 / config.C)
        _, rho = benchmark_scheme(config, state)
    elif method == "jensen_opt":
        try:
            p = jensen_optimal_probs(rho, catalog, state)
        except SingularMatrixError:
            p, flag = high_snr_probs(rho, catalog, state), "singular_fallback"
    elif method == "high_snr":
        p = high_snr_probs(rho, catalog, state)
    elif method == "low_snr":
        p, _ = low_snr_probs(rho, catalog, state)
    elif method == "benchmark":
        p, rho = benchmark_scheme(config, state)
    elif method == "enumerative":
        sol = solve_constrained_enumerative(state, config, objective, samples, seed, partitions=partitions)
        return sol.mi.value, sol.mi.std_error, sol.flag
    else:
        sol = solve_constrained_projected(
            state, config, method.removeprefix("projected_"), samples=samples, seed=seed, partitions=partitions
        )
        return sol.mi.value, sol.mi.std_error, sol.flag
    est = mi_monte_carlo(p, rho, catalog, state, samples, seed, partitions)
    return est.value, est.std_error, flag


def run_mi_curve(args) -> int:
    config = system(args)
    gains, phases, noise_var = base_gains(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if methods == ["all"]:
        methods = list(METHODS)
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    t = Table(["snr_db", "method", "mi_nats", "std_err", "samples", "seed", "flag"])
    for snr in parse_grid(args.snr_db):
        state = ChannelState.from_snr_db(gains, snr, noise_var, phases)
        for m in methods:
            value, err, flag = mi_point(m, state, config, args.samples, args.seed, args.threads, args.objective)
            used = 0 if m in CLOSED_FORM_METHODS else args.samples
            t.row(snr, m, value, err, used, args.seed, flag)
    emit(t.finish(args), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bler
# ---------------------------------------------------------------------------


def run_bler_cmd(args) -> int:
    config = system(args)
    if args.gains or getattr(args, "channel", None):
        gains, _, _ = base_gains(args)
    else:
        gains = None
    grid = parse_grid(args.snr_db)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise UsageError(f"unknown mode {m!r}; expected one of {', '.join(MODES)}")
    con = Constellation.named(args.constellation)
    t = Table(["snr_db", "mode", "constellation", "blocks", "block_errors", "bler",
               "ci_low", "ci_high", "seed", "flag", "probabilities"])
    partial = False
    for mode in modes:
        res = run_bler(config, args.eta, grid, mode, con, args.target_errors, args.seed,
                       args.threads, args.block_cap, gains, threads=args.threads)
        for pt, p in res:
            partial |= pt.partial
            t.row(pt.snr_db, mode, con.name, pt.blocks, pt.block_errors, pt.bler, pt.ci_low,
                  pt.ci_high, pt.seed, "partial" if pt.partial else "", " ".join(fmt(x) for x in p))
    emit(t.finish(args), args.out)
    return EXIT_PARTIAL if partial else EXIT_OK


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def run_optimize(args) -> int:
    config = system(args)
    gains, phases, noise_var = base_gains(args)
    grid = parse_grid(args.snr_db)
    if len(grid) != 1:
        raise UsageError("optimize takes a single SNR value")
    state = ChannelState.from_snr_db(gains, grid[0], noise_var, phases)
    catalog = config.catalog()
    depths = [""] * config.C
    flag = ""
    if args.method == "enumerative":
        sol = solve_constrained_enumerative(state, config, args.objective, args.samples, args.seed,
                                            partitions=args.threads)
        p, rho, mi, flag = np.array(sol.p.to_list()), sol.rho, sol.mi, sol.flag
        depths = ["" if d is None else d for d in sol.p.depths]
    elif args.method == "projected":
        sol = solve_constrained_projected(state, config, args.metric, args.relaxed, args.samples,
                                          args.seed, partitions=args.threads)
        p, rho, mi, flag = np.array(sol.p.to_list()), sol.rho, sol.mi, sol.flag
        depths = ["" if d is None else d for d in sol.p.depths]
    else:
        res = bcd_optimize(state, config, args.mc_budget, args.seed, eval_samples=args.samples,
                           partitions=args.threads)
        p, rho, mi = res.p, res.rho, res.mi
        flag = "" if res.converged else "not_converged"
    t = Table(["sap", "subcarriers", "probability", "depth"] + [f"rho_{l + 1}" for l in range(config.N)])
    for i in range(config.C):
        t.row(i + 1, catalog.label(i), p[i], depths[i], *rho[i])
    extra = f"# method={args.method} snr_db={fmt(grid[0])} mi_nats={fmt(mi.value)} std_err={fmt(mi.std_error)}"
    extra += f" samples={mi.samples}" + (f" flag={flag}" if flag else "") + "\n"
    emit(t.finish(args, extra), args.out)
    return EXIT_PARTIAL if flag in PARTIAL_FLAGS else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="imtree", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"imtree {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, stochastic=True):
        p.add_argument("--out", help="output file (default stdout)")
        if stochastic:
            p.add_argument("--seed", type=int, required=True)
            p.add_argument("--threads", type=int, default=1, help="RNG partitions and worker threads")

    def channel(p, snr_default):
        p.add_argument("--n", type=int, default=4)
        p.add_argument("--k", type=int, default=2)
        g = p.add_mutually_exclusive_group()
        g.add_argument("--eta", type=float, default=0.2, help="gains eta**(l-1)")
        g.add_argument("--gains", help="comma-separated linear gains")
        g.add_argument("--channel", help="JSON or CSV channel state (gains, phases, noise_var)")
        p.add_argument("--snr-db", default=snr_default, help="start:step:stop or a single value")

    p = sub.add_parser("trees", help="reduced tree counts and bounds")
    p.add_argument("--v-max", type=int, default=TREES_GUARD)
    p.add_argument("--force", action="store_true")
    common(p, stochastic=False)
    p.set_defaults(func=run_trees)

    p = sub.add_parser("project", help="project probabilities onto dyadic vectors")
    p.add_argument("--probs", required=True, help="comma-separated probabilities")
    p.add_argument("--metric", choices=METRICS, default="euclidean")
    common(p, stochastic=False)
    p.set_defaults(func=run_project)

    p = sub.add_parser("mi-curve", help="mutual information versus SNR")
    channel(p, "-10:10:30")
    p.add_argument("--methods", default="all", help=f"comma list from: {', '.join(METHODS)}, or all")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--objective", choices=OBJECTIVES, default="auto", help="enumerative objective")
    common(p)
    p.set_defaults(func=run_mi_curve)

    p = sub.add_parser("bler", help="block error rate versus SNR")
    channel(p, "0:5:30")
    p.add_argument("--constellation", choices=("bpsk", "qpsk"), default="bpsk")
    p.add_argument("--modes", default=",".join(MODES))
    p.add_argument("--target-errors", type=int, default=1000)
    p.add_argument("--block-cap", type=int, default=10_000_000)
    common(p)
    p.set_defaults(func=run_bler_cmd)

    p = sub.add_parser("optimize", help="optimize probabilities and powers at one SNR")
    channel(p, "10")
    p.add_argument("--method", choices=("projected", "enumerative", "bcd"), default="projected")
    p.add_argument("--metric", choices=METRICS, default="euclidean")
    p.add_argument("--relaxed", choices=("high_snr", "jensen"), default="high_snr")
    p.add_argument("--objective", choices=OBJECTIVES, default="auto")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--mc-budget", type=int, default=20_000, help="BCD draws per pattern")
    common(p)
    p.set_defaults(func=run_optimize)
    return ap


def _join_negative_values(argv: list[str]) -> list[str]:
    # argparse reads "-10:10:30" as an option string; glue it to its flag
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in ("--snr-db", "--gains", "--probs"):
            nxt = next(it, None)
            if nxt is not None and nxt.startswith("-") and nxt[1:2].isdigit():
                out.append(f"{tok}={nxt}")
                continue
            out.append(tok)
            if nxt is not None:
                out.append(nxt)
            continue
        out.append(tok)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(_join_negative_values(argv))
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"imtree: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, MemoryError) as exc:
        print(f"imtree: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
