"""Command-line front end: simulate -> fit -> calibrate -> test -> dpl.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_genotypes
from .dpl import scan, write_scan
from .inference import Thresholds, calibrate_thresholds, run_tests
from .sampler import RunConfig, run_chain
from .simulate import GENE_MAP_FILE, GENOTYPE_FILE, simulate_alternative, simulate_null
from .trace import Trace

log = logging.getLogger("gxgmix")


def _open_unit(text):
    q = float(text)
    if not 0.0 < q < 1.0:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return q


def _top_fraction(text):
    q = float(text)
    if not 0.0 < q <= 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return q


def _positive(kind):
    def parse(text):
        x = kind(text)
        if x <= 0:
            raise argparse.ArgumentTypeError("must be positive")
        return x
    return parse


def _loci(text):
    try:
        vals = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or comma-separated integers") from None
    if min(vals) < 1:
        raise argparse.ArgumentTypeError("locus counts must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gxgmix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic case-control dataset")
    s.add_argument("--regime", choices=("null", "alt"), default="null")
    s.add_argument("--genes", type=_positive(int), default=2)
    s.add_argument("--loci", type=_loci, default=[20], help="loci per gene (one value or one per gene)")
    s.add_argument("--n0", type=_positive(int), default=100)
    s.add_argument("--n1", type=_positive(int), default=100)
    s.add_argument("--alpha", type=_positive(float), default=1.5)
    s.add_argument("--m", type=_positive(int), default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--a-spec", type=Path,
                   help="JSON with A (J x J), optional Sigma (2 x 2), delta and shared (alt regime)")
    s.add_argument("--delta", type=float, help="case effect added to every gene (alt regime)")
    s.add_argument("--out", type=Path, required=True)

    f = sub.add_parser("fit", help="run the sampler")
    f.add_argument("--data", type=Path, required=True, help=f"directory with {GENOTYPE_FILE} and {GENE_MAP_FILE}")
    f.add_argument("--config", type=Path, help="JSON file with run-configuration fields")
    f.add_argument("--out", type=Path, required=True, help="NDJSON trace path")
    f.add_argument("--resume", type=Path, help="checkpoint to continue from")
    f.add_argument("--checkpoint", type=Path, help="checkpoint path (default: <out>.ckpt)")
    f.add_argument("--checkpoint-every", type=_positive(int), default=1000)
    for flag, kind in (("iterations", int), ("burn-in", int), ("thin", int), ("workers", int),
                       ("seed", int), ("m", int), ("alpha", float)):
        f.add_argument(f"--{flag}", type=kind)

    c = sub.add_parser("calibrate", help="null-trace thresholds")
    c.add_argument("--null-trace", type=Path, required=True)
    c.add_argument("--q", type=_open_unit, default=0.55)
    c.add_argument("--per-gene", action="store_true", help="also calibrate per-gene thresholds")
    c.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("test", help="hypothesis tests on a trace")
    t.add_argument("--trace", type=Path, required=True)
    t.add_argument("--thresholds", type=Path, required=True)
    t.add_argument("--c", type=_positive(float), default=1.0)
    t.add_argument("--c-confirm", type=_positive(float), default=19.0)
    t.add_argument("--out", type=Path, required=True)

    d = sub.add_parser("dpl", help="per-locus divergence scan")
    d.add_argument("--trace", type=Path, required=True)
    d.add_argument("--q", type=_top_fraction, default=0.02)
    d.add_argument("--out", type=Path, required=True)
    return p


# --- subcommands ------------------------------------------------------------


def cmd_simulate(args):
    J = args.genes
    loci = args.loci if len(args.loci) == J else args.loci[:1] * J
    if len(args.loci) not in (1, J):
        raise ValueError(f"--loci needs 1 or {J} values")
    if args.regime == "null":
        sim = simulate_null(J, loci, args.n0, args.n1, args.alpha, args.m, args.seed)
    else:
        spec = {}
        if args.a_spec is not None:
            with open(args.a_spec, encoding="utf-8") as fh:
                spec = json.load(fh)
        delta = args.delta if args.delta is not None else spec.get("delta", 0.0)
        sim = simulate_alternative(J, loci, args.n0, args.n1, args.alpha, args.m,
                                   spec.get("A", np.eye(J).tolist()), spec.get("Sigma", np.eye(2).tolist()),
                                   args.seed, delta=delta, shared=bool(spec.get("shared", False)))
        if args.a_spec is not None:
            sim.truth["spec"] = spec
    out = sim.write(args.out)
    print(f"wrote {out / GENOTYPE_FILE}, {out / GENE_MAP_FILE}, {out / 'truth.json'}")


def _fit_config(args) -> RunConfig:
    base = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    overrides = {"iterations": args.iterations, "burn_in": args.burn_in, "thin": args.thin,
                 "workers": args.workers, "seed": args.seed, "M": args.m, "alpha": args.alpha}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(base)


def cmd_fit(args):
    cfg = _fit_config(args)
    ds = load_genotypes(args.data / GENOTYPE_FILE, args.data / GENE_MAP_FILE)
    ckpt = args.checkpoint or Path(str(args.out) + ".ckpt")
    trace = run_chain(ds, cfg, trace_path=args.out, checkpoint_path=ckpt, resume=args.resume,
                      checkpoint_every=args.checkpoint_every)
    print(f"wrote {len(trace)} records to {args.out}; checkpoint {ckpt}")
    for name, rate in trace.final_state.counter.rates().items():
        print(f"acceptance {name:<15} {rate:.3f}")


def cmd_calibrate(args):
    trace = Trace.load(args.null_trace)
    th = calibrate_thresholds(trace, q=args.q, per_gene=args.per_gene)
    th.to_json(args.out)
    print(f"eps_cluster={th.eps_cluster:.6g} eps_euclid={th.eps_euclid:.6g} "
          f"eps_interaction={th.eps_interaction:.6g} (q={th.quantile}, {th.n_records} records)")


def cmd_test(args):
    trace = Trace.load(args.trace)
    th = Thresholds.from_json(args.thresholds)
    report = run_tests(trace, th, c_cluster=args.c, c_confirm=args.c_confirm)
    report.to_json(args.out)
    print(report.summary())


def cmd_dpl(args):
    if not args.trace.exists():
        raise FileNotFoundError(f"trace not found: {args.trace}")
    trace = Trace.load(args.trace)
    scores = scan(trace, q=args.q)
    for path in write_scan(scores, args.out):
        print(f"wrote {path}")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "calibrate": cmd_calibrate,
            "test": cmd_test, "dpl": cmd_dpl}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"gxgmix {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
