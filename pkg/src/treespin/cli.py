"""Command-line front end.

Vertices are 0-based positions in level order; states are 1-based in
every emitted file.  Exit codes: 0 ok, 1 numeric failure, 2 usage,
3 state-space guard exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from . import bp_ratio
from . import coloring_recursion as cr
from . import functionals as fn
from .errors import InvalidParams, TooLarge, TreeSpinError
from .glauber import classify_all, component_dynamics_move, component_of, glauber_move
from .rng import stream
from .spin_model import ModelSpec, format_model, kesten_stigum_ok, parse_model, second_eigenvalue
from .tree import (
    DEFAULT_GUARD,
    BoundarySpec,
    TreeShape,
    broadcast_sample,
    conditional_sample,
    format_configuration,
    parse_configuration,
    reconstruction_table,
)

SPEC_VERSION = "1.0"


class Output:
    """A table (CSV) or a JSON document, plus raw text lines for config dumps."""

    def __init__(self, header=None, rows=None, extra=None, text=None):
        self.header = header
        self.rows = rows or []
        self.extra = extra or {}
        self.text = text


def _cell(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def render(out: Output, args) -> str:
    if args.format == "json":
        doc = {
            "spec_version": SPEC_VERSION,
            "version": __version__,
            "command": args.command,
            "params": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")},
        }
        if out.header is not None:
            doc["columns"] = out.header
            doc["rows"] = out.rows
        if out.text is not None:
            doc["lines"] = out.text
        doc.update(out.extra)
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"
    if out.header is None:
        return "".join(line + "\n" for line in out.text or [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(out.header)
    for row in out.rows:
        w.writerow([_cell(c) for c in row])
    return buf.getvalue()


# -- argument helpers -------------------------------------------------------


def _model(args) -> ModelSpec:
    if args.model_file:
        with open(args.model_file, encoding="utf-8") as fh:
            return parse_model(fh.read())
    kind = getattr(args, "type", "coloring")
    if kind == "uniform":
        return ModelSpec(args.k, "custom", {}, {})
    return ModelSpec(args.k, "coloring")


def _kernel(args):
    return _model(args).kernel()


def _state(s):
    """1-based state on the command line to 0-based internally."""
    return None if s is None else s - 1


def _boundary(args, shape, start=None) -> BoundarySpec:
    frozen = {}
    if getattr(args, "freeze_leaves", False):
        if start is None:
            raise InvalidParams("--freeze-leaves needs a starting configuration")
        for v in shape.level_range(shape.depth):
            frozen[v] = int(start[v])
    if args.parent_state is not None:
        return BoundarySpec.with_parent(_state(args.parent_state), frozen)
    return BoundarySpec(frozen)


def _start(args, shape, kernel, rng):
    if args.start:
        return tuple(parse_configuration(args.start))
    return broadcast_sample(shape, kernel, rng, parent_state=_state(args.parent_state))


# -- subcommands -------------------------------------------------------------


def cmd_model(args) -> Output:
    spec = _model(args)
    kernel = spec.kernel()
    if args.echo:
        return Output(text=format_model(spec).splitlines())
    lam = second_eigenvalue(kernel)
    extra = {"k": kernel.k, "M": kernel.M, "pi": kernel.pi, "second_eigenvalue": lam}
    ok, val = kesten_stigum_ok(kernel, args.d)
    extra["kesten_stigum"] = {"d": args.d, "d_lambda_sq": val, "below": ok}
    rows = [[i + 1, j + 1, kernel.M[i, j], kernel.pi[i]] for i in range(kernel.k) for j in range(kernel.k)]
    return Output(["row", "col", "M", "pi_row"], rows, extra if args.format == "json" else None)


def cmd_sample(args) -> Output:
    kernel = _kernel(args)
    shape = TreeShape(args.d, args.depth)
    rng = stream(args.seed)
    if args.component:
        config = parse_configuration(args.component)
        boundary = _boundary(args, shape, config)
        comp = component_of(config, shape, kernel, (args.vertex, args.block_size), boundary, args.guard)
        lines = [format_configuration(m) for m in comp.members]
        return Output(text=lines, extra={"weights": list(comp.weights)} if args.format == "json" else None)
    boundary = _boundary(args, shape)
    if boundary.frozen:
        X = conditional_sample(shape, kernel, boundary, rng, size=args.samples)
    else:
        X = broadcast_sample(shape, kernel, rng, size=args.samples)
    return Output(text=[format_configuration(x) for x in X])


def cmd_dynamics(args) -> Output:
    kernel = _kernel(args)
    shape = TreeShape(args.d, args.depth)
    rng = stream(args.seed)
    config = _start(args, shape, kernel, stream(args.seed, 1))
    boundary = _boundary(args, shape, config)
    rows = []
    for t in range(1, args.steps + 1):
        if args.dynamics == "glauber":
            config, v, old, new = glauber_move(config, shape, kernel, boundary, rng)
            rows.append([t, v, old + 1, new + 1])
            continue
        prev = config
        config, x = component_dynamics_move(config, shape, kernel, args.block_size, rng, boundary, args.guard)
        changed = [v for v in range(shape.n) if prev[v] != config[v]]
        for v in changed or [x]:
            rows.append([t, v, prev[v] + 1, config[v] + 1])
    extra = {"final": format_configuration(config)} if args.format == "json" else None
    return Output(["step", "vertex", "old_state", "new_state"], rows, extra)


def cmd_mixing(args) -> Output:
    kernel = _kernel(args)
    shape = TreeShape(args.d, args.depth)
    boundary = _boundary(args, shape)
    l = args.block_size if args.dynamics == "component" else None
    chain = fn.transition_chain(shape, kernel, boundary, args.dynamics, l, args.guard)
    gap = fn.spectral_gap(chain)
    try:
        mix = fn.mixing_time_exact(chain)
        t_mix, exact = mix.t_mix, mix.exact
    except TreeSpinError:
        t_mix, exact = "inf", True
    name = args.dynamics if l is None else f"component(l={l})"
    row = [shape.n, args.depth, kernel.k, args.d, name, gap, t_mix]
    extra = None
    if args.format == "json":
        lam2, lam_star = fn.extreme_eigenvalues(chain)
        extra = {
            "states": chain.N,
            "lambda_2": lam2,
            "lambda_star": lam_star,
            "t_mix_exact": exact,
            "reversibility_residual": fn.reversibility_residual(chain, stream(args.seed, 2)),
            "row_sum_error": fn.row_sum_error(chain),
        }
        if chain.N <= fn.ALL_STARTS_LIMIT:
            extra["log_sobolev_upper"] = fn.log_sobolev_upper(chain, trials=args.trials, rng=stream(args.seed, 3))
    return Output(["n", "depth", "k", "d", "dynamics", "gap", "t_mix"], [row], extra)


def cmd_ratio(args) -> Output:
    kernel = _kernel(args)
    if args.what == "contraction":
        rows = [[m, f] for m, f in bp_ratio.contraction_table(kernel, range(1, args.max_m + 1))]
        return Output(["m", "contraction_factor"], rows)
    shape = TreeShape(args.d, args.levels)
    if args.what == "reconstruction":
        rows = reconstruction_table(shape, kernel, range(1, args.levels + 1), args.guard)
        return Output(["l", "c", "c_prime", "tv"], [list(r) for r in rows])
    if args.what == "boundary":
        eta = [_state(int(s)) for s in args.boundary.split()]
        r = bp_ratio.ratio_from_boundary(shape, kernel, eta, 0, args.levels)
        return Output(["c", "ratio"], [[c + 1, float(v)] for c, v in enumerate(r)])
    rng = stream(args.seed)
    rows = []
    for z in args.z:
        est = bp_ratio.deviation_tail(shape, kernel, args.levels, z, args.mode, args.samples, rng, args.guard)
        rows.append([est.l, est.z, est.value, est.ci_low, est.ci_high])
    col = "g_exact" if args.mode == "exact" else "g_hat"
    return Output(["l", "z", col, "ci_low", "ci_high"], rows)


def cmd_classify(args) -> Output:
    if args.config:
        kernel = _kernel(args)
        shape = TreeShape(args.d, args.depth)
        config = parse_configuration(args.config)
        res = classify_all(config, shape, kernel, _state(args.parent_state))
        rows = [
            [v, config[v] + 1, " ".join(str(c + 1) for c in sorted(r.C)), r.type, "" if r.bad is None else r.bad, r.free]
            for v, r in enumerate(res)
        ]
        return Output(["vertex", "state", "change_set", "type", "bad", "free"], rows)
    est = cr.mc_estimate_probs(args.k, args.d, args.depth, args.samples, stream(args.seed))
    rows = []
    for e in est:
        lo, hi = e.interval("bad")
        rows.append([e.height, e.n, e.p("rigid"), e.p("type2"), e.p("type3"), e.p("bad"), lo, hi, e.p("free")])
    return Output(["height", "n", "p_r", "p2", "p3", "p_b", "p_b_ci_low", "p_b_ci_high", "p_free"], rows)


def cmd_recursion(args) -> Output:
    rows = cr.recursion_csv_rows(args.k, args.d, args.levels, args.beta_star)
    return Output(list(cr.SCAN_HEADER), rows)


def _k_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def cmd_scan(args) -> Output:
    rows = cr.threshold_scan(_k_list(args.k_list), args.beta, args.levels, args.beta_star)
    return Output(list(cr.SCAN_HEADER), cr.scan_csv_rows(rows))


def cmd_verify(args) -> Output:
    from .acceptance import verify

    only = [int(t) for t in args.only.split(",")] if args.only else None
    report, ok = verify(args.seed, repeat=not args.once, only=only)
    args._status = 0 if ok else 1
    return Output(text=report.rstrip("\n").splitlines())


# -- parser -----------------------------------------------------------------


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k", type=int, default=3, help="number of states")
    g.add_argument("--d", type=int, default=2, help="branching number")
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--block-size", type=int, default=1)
    g.add_argument("--samples", type=int, default=10_000)
    g.add_argument("--out", help="write output here instead of stdout")
    g.add_argument("--format", choices=["csv", "json"], default="csv")
    g.add_argument("--guard", type=int, default=DEFAULT_GUARD, help="state-space size limit")
    g.add_argument("--model-file", help="key=value model file (overrides --k)")
    g.add_argument("--parent-state", type=int, help="freeze the root's virtual parent (1-based)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="treespin", description="Spin systems on d-ary trees.")
    parser.add_argument("--version", action="version", version=f"treespin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", parents=[common], help="parse or echo a kernel")
    p.add_argument("--type", choices=["coloring", "uniform"], default="coloring")
    p.add_argument("--echo", action="store_true", help="print the canonical model file")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("sample", parents=[common], help="broadcast samples or component dumps")
    p.add_argument("--component", metavar="CONFIG", help="dump the component of this configuration")
    p.add_argument("--vertex", type=int, default=0, help="block root for --component")
    p.add_argument("--freeze-leaves", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("dynamics", parents=[common], help="trajectory log of a chain")
    p.add_argument("--dynamics", choices=["glauber", "component"], default="glauber")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--start", metavar="CONFIG")
    p.add_argument("--freeze-leaves", action="store_true")
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("mixing", parents=[common], help="spectral gap, mixing time and functionals")
    p.add_argument("--dynamics", choices=["glauber", "component"], default="glauber")
    p.add_argument("--trials", type=int, default=10, help="restarts for the log-Sobolev search")
    p.set_defaults(func=cmd_mixing)

    p = sub.add_parser("ratio", parents=[common], help="ratio recursion, tails, contraction")
    p.add_argument("--what", choices=["tail", "contraction", "reconstruction", "boundary"], default="tail")
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--z", type=float, nargs="+", default=[0.5, 1.0, 1.5])
    p.add_argument("--mode", choices=["exact", "mc"], default="exact")
    p.add_argument("--max-m", type=int, default=5)
    p.add_argument("--boundary", metavar="STATES", help="level-l states for --what boundary")
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("classify", parents=[common], help="change sets and type frequencies")
    p.add_argument("--config", metavar="CONFIG", help="classify one configuration exactly")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("recursion", parents=[common], help="exact type recursion with the Poisson bound")
    p.add_argument("--levels", type=int, default=10)
    p.add_argument("--beta-star", type=float)
    p.set_defaults(func=cmd_recursion)

    p = sub.add_parser("scan", parents=[common], help="threshold table over k")
    p.add_argument("--k-list", default="10-100", help="e.g. 10-100 or 5,8,13")
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--levels", type=int, default=40)
    p.add_argument("--beta-star", type=float)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--once", action="store_true", help="skip the second, determinism run")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out = args.func(args)
        text = render(out, args)
    except TooLarge as exc:
        print(f"treespin: TooLarge: {exc}", file=sys.stderr)
        return 3
    except (TreeSpinError, ValueError, ArithmeticError, OSError) as exc:
        print(f"treespin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return getattr(args, "_status", 0)


if __name__ == "__main__":
    sys.exit(main())
