"""Command line front end: ``subid simulate | identify | evaluate``.

Exit codes: 0 on success, 2 for usage or validation errors, 1 for numerical
failures inside an algorithm.
"""
import argparse
import json
import sys
import warnings

import numpy as np

from . import simdata as sd
from .closedloop import identify_cl
from .evalmetrics import report
from .exceptions import NumericalFailure, SubidError
from .openloop import IdentOptions, IdentResult, identify_ol
from .ssmodel import NoiseSpec, SsModel

ALGO_NAMES = {
    "ols-joint": "ols_joint",
    "ols-projected": "ols_projected",
    "moesp-rq": "moesp_rq",
    "cls-vec": "cls_vectorized",
    "cls-2step": "cls_twostep",
    "cls-causal": "cls_causal",
    "iem": "iem",
    "ssarx": "ssarx",
    "pbsid": "pbsid",
}
CLOSED_LOOP_ALGOS = ("iem", "ssarx", "pbsid")
INPUT_KINDS = {"white": sd.WHITE, "binary": sd.BINARY, "zero": sd.ZERO}


class UsageError(Exception):
    pass


def _order(text):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("order must be a positive integer or 'auto'") from None
    if value < 1:
        raise argparse.ArgumentTypeError("order must be a positive integer or 'auto'")
    return value


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _add_sim_source(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", help="model JSON (open-loop simulation)")
    src.add_argument("--loop", help="loop JSON (closed-loop simulation)")
    src.add_argument("--benchmark", choices=("open", "closed"),
                     help="built-in scalar benchmark (pole 0.9, K 0.5, innovation SD 0.3)")
    p.add_argument("--noise", help="noise JSON with Q, R, S (process form)")
    p.add_argument("--innovation-sd", type=float, help="innovation standard deviation (needs K)")
    p.add_argument("--input-kind", choices=sorted(INPUT_KINDS), default="white")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--switch-period", type=int, default=1)
    p.add_argument("--samples", type=int, default=1000)


def build_parser():
    parser = argparse.ArgumentParser(prog="subid", description="Subspace system identification")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="simulate data and write CSV")
    _add_sim_source(ps)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True, help="output CSV path")

    pi = sub.add_parser("identify", help="identify a model from CSV data")
    pi.add_argument("--data", help="input CSV (t,u1..,y1..)")
    pi.add_argument("--algo", choices=sorted(ALGO_NAMES), default="ols-projected")
    pi.add_argument("--p", type=int, default=10)
    pi.add_argument("--f", type=int, default=None, help="future horizon (defaults to p)")
    pi.add_argument("--order", type=_order, default="auto")
    pi.add_argument("--extraction", choices=("state", "observability"), default="state")
    pi.add_argument("--weighting", choices=("identity", "cca"), default="identity")
    pi.add_argument("--closed-loop", action="store_true", help="data were recorded under feedback")
    pi.add_argument("--runs", type=int, default=1,
                    help="Monte Carlo runs of simulate+identify (needs a simulation source)")
    pi.add_argument("--seed", type=int, default=0)
    _add_sim_source(pi)
    pi.add_argument("--out", required=True, help="result JSON path")

    pe = sub.add_parser("evaluate", help="compare an estimate with the true model")
    pe.add_argument("--truth", required=True, help="true model JSON")
    pe.add_argument("--result", required=True, help="identification result JSON")
    pe.add_argument("--data", help="CSV for VAF")
    pe.add_argument("--depth", type=int, default=5)
    pe.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    pe.add_argument("--out", help="report JSON path")
    return parser


# ------------------------------------------------------------------ simulate
def simulate_from_args(args, seed):
    """Generate the data set described by the simulation flags."""
    if args.benchmark == "open":
        return sd.benchmark_open(args.samples, seed)
    if args.benchmark == "closed":
        return sd.simulate_closed(sd.benchmark_loop(), args.samples, seed)
    if args.loop:
        return sd.simulate_closed(sd.LoopSpec.from_dict(_load_json(args.loop)), args.samples, seed)
    if not args.model:
        raise UsageError("one of --model, --loop or --benchmark is required")
    model = SsModel.from_dict(_load_json(args.model))
    spec = sd.ExcitationSpec(INPUT_KINDS[args.input_kind], args.amplitude, args.switch_period)
    u = sd.gen_excitation(spec, model.n_u, args.samples, sd.child_seed(seed, 3))
    if args.innovation_sd is not None:
        cov = args.innovation_sd ** 2 * np.eye(model.n_y)
        return sd.simulate_open(model, u, innovation_cov=cov, seed=seed)
    noise = NoiseSpec.from_dict(_load_json(args.noise)) if args.noise else None
    return sd.simulate_open(model, u, noise=noise, seed=seed)


def _stability_report(args):
    if args.benchmark == "closed" or args.loop:
        loop = sd.benchmark_loop() if args.benchmark else sd.LoopSpec.from_dict(_load_json(args.loop))
        rho = np.max(np.abs(np.linalg.eigvals(sd.loop_matrix(loop.plant, loop.controller))))
        return f"closed-loop spectral radius {rho:.6f} (stable)"
    return "open-loop simulation"


def cmd_simulate(args):
    data = simulate_from_args(args, args.seed)
    sd.write_csv(data, args.out)
    print(f"seed {args.seed}")
    print(_stability_report(args))
    print(f"wrote {data.N} samples to {args.out}")
    return 0


# ------------------------------------------------------------------ identify
def run_identification(data, algo, p, f, order, extraction="state", weighting="identity",
                       closed_loop=False):
    """Library call behind ``identify``; ``algo`` uses the command-line names."""
    name = ALGO_NAMES[algo]
    f = p if f is None else f
    if name in CLOSED_LOOP_ALGOS:
        if name != "iem" and f > p:
            raise UsageError("f must not exceed p")
        return identify_cl(data, name, p, f, order, None, closed_loop)
    opts = IdentOptions(p=p, f=f, order=order, algorithm=name, extraction=extraction,
                        weighting=weighting)
    return identify_ol(data, opts)


def cmd_identify(args):
    name = ALGO_NAMES[args.algo]
    f = args.p if args.f is None else args.f
    if name in ("ssarx", "pbsid") and f > args.p:
        raise UsageError("f must not exceed p")
    if name in CLOSED_LOOP_ALGOS and not args.closed_loop:
        warnings.warn(f"{args.algo} on data not flagged --closed-loop: estimating D as well")
    if name not in CLOSED_LOOP_ALGOS and args.closed_loop:
        warnings.warn(f"{args.algo} is an open-loop method; estimates may be biased under feedback")

    def one(data):
        data.closed_loop = args.closed_loop
        return run_identification(data, args.algo, args.p, f, args.order, args.extraction,
                                  args.weighting, args.closed_loop)

    if args.runs > 1:
        results = [one(simulate_from_args(args, args.seed + k)) for k in range(args.runs)]
        _dump_json([r.to_dict() for r in results], args.out)
        orders = [r.order for r in results]
        print(f"{args.runs} runs, orders {orders}")
        return 0
    if not args.data:
        raise UsageError("--data is required unless --runs > 1")
    data = sd.read_csv(args.data, closed_loop=args.closed_loop)
    res = one(data)
    _dump_json(res.to_dict(), args.out)
    sv = np.asarray(res.singular_values)
    shown = ", ".join(f"{s:.4g}" for s in sv[:min(sv.size, 12)])
    print(f"singular values: {shown}")
    print(f"chosen order: {res.order}")
    flags = res.diagnostics.get("rank_flags", [])
    if flags:
        print(f"rank flags: {', '.join(flags)}")
    return 0


# ------------------------------------------------------------------ evaluate
def cmd_evaluate(args):
    truth = SsModel.from_dict(_load_json(args.truth))
    res = IdentResult.from_dict(_load_json(args.result))
    est = res.model
    if (truth.n_u, truth.n_y) != (est.n_u, est.n_y):
        raise UsageError(
            f"dimension mismatch: truth (n_u={truth.n_u}, n_y={truth.n_y}) vs "
            f"estimate (n_u={est.n_u}, n_y={est.n_y})")
    data = sd.read_csv(args.data) if args.data else None
    if data is not None and (data.n_u, data.n_y) != (est.n_u, est.n_y):
        raise UsageError("data dimensions do not match the models")
    rep = report(truth, est, data, args.depth)
    if args.out:
        _dump_json(rep, args.out)
    print(f"eig_distance  {rep['eig_distance']:.6g}")
    print(f"markov_error  {rep['markov_error']:.6g}")
    if rep["vaf"]:
        print("vaf           " + ", ".join("n/a" if v is None else f"{v:.3f}" for v in rep["vaf"]))
    return 0


COMMANDS = {"simulate": cmd_simulate, "identify": cmd_identify, "evaluate": cmd_evaluate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalFailure as exc:
        print(f"subid: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, SubidError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"subid: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
