"""Command-line entry point: ``longdml {estimate,simulate,diagnose}``.

Exit codes: 0 success, 2 user error (flags, config, data), 3 estimation
error. Every file written starts with one provenance line
``# longdml <version> config=<digest> seed=<seed>``.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .core import PROBLEMS, LocalConfig, RunConfig, Schema, load_dataset, stream
from .diagnostics import check_orthogonality, measure_rates, rows_to_csv
from .dml import estimate, estimate_local
from .errors import ConfigurationError, EstimationError, UserInputError
from .moments import MomentSpec
from .sim.dgp import make_dgp
from .sim.study import run_study

EXIT_OK, EXIT_USER, EXIT_ESTIMATION = 0, 2, 3
CHECKS = ("orthogonality", "rates", "coverage-curve")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def provenance(cfg: RunConfig) -> str:
    return f"# longdml {__version__} config={cfg.digest()} seed={cfg.seed}\n"


def write_output(path, cfg: RunConfig, body: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(provenance(cfg) + body, encoding="utf-8")


def read_output(path) -> tuple[str, str]:
    """Split a written file into (provenance line, body)."""
    text = Path(path).read_text(encoding="utf-8")
    head, _, body = text.partition("\n")
    return head, body


def _long_path(out: Path) -> Path:
    return out.with_name(out.stem + "_long" + (out.suffix or ".csv"))


def _ints(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty integer list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="longdml", description="Debiased machine learning for longitudinal causal parameters.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", required=True, help="output file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--threads", type=int, help="worker threads (env LONGDML_THREADS)")
        sp.add_argument("--d", type=int, choices=(0, 1))
        sp.add_argument("--d1", type=int, choices=(0, 1))
        sp.add_argument("--d2", type=int, choices=(0, 1))
        sp.add_argument("--local-v", type=float)
        sp.add_argument("--local-h", type=float)
        sp.add_argument("--local-kernel", choices=("gaussian", "epanechnikov"))

    est = sub.add_parser("estimate", help="cross-fitted estimate from a data file")
    common(est)
    est.add_argument("--data", required=True)
    est.add_argument("--problem", required=True, choices=PROBLEMS)

    sim = sub.add_parser("simulate", help="Monte Carlo coverage study")
    common(sim)
    sim.add_argument("--dgp", required=True)
    sim.add_argument("--n", required=True, type=int)
    sim.add_argument("--reps", required=True, type=int)

    dia = sub.add_parser("diagnose", help="orthogonality, rate and coverage-curve checks")
    common(dia)
    dia.add_argument("--dgp", required=True)
    dia.add_argument("--check", required=True)
    dia.add_argument("--n", type=_ints, default=[2000], help="sample size(s), comma-separated")
    dia.add_argument("--reps", type=int, default=100)
    dia.add_argument("--draws", type=int, help="Monte Carlo draws (orthogonality 100000, rates 20000)")
    dia.add_argument("--directions", type=int, default=20)
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.local_v is not None or args.local_h is not None or args.local_kernel is not None:
        kernel = args.local_kernel or cfg.local.kernel
        h = args.local_h if args.local_h is not None else cfg.local.h
        v = args.local_v if args.local_v is not None else cfg.local.v
        cfg = cfg.replace(local=LocalConfig(kernel=kernel, h=h, v=v))
    return cfg


def _levels(args, problem: str) -> tuple:
    if problem == "dynamic":
        if args.d is not None:
            raise ConfigurationError("the dynamic problem takes --d1/--d2, not --d")
        return (1 if args.d1 is None else args.d1, 1 if args.d2 is None else args.d2)
    if args.d1 is not None or args.d2 is not None:
        raise ConfigurationError(f"{problem} takes --d, not --d1/--d2")
    return (1 if args.d is None else args.d,)


def _spec(args, problem: str, cfg: RunConfig) -> MomentSpec:
    return MomentSpec(problem, _levels(args, problem), local=cfg.local.active)


def cmd_estimate(args) -> int:
    cfg = _config(args)
    spec = _spec(args, args.problem, cfg)
    path = Path(args.data)
    if not path.is_file():
        raise ConfigurationError(f"data file {path} not found")
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    data = load_dataset(path, Schema.infer(header, args.problem), args.problem)
    runner = estimate_local if cfg.local.active else estimate
    report = runner(data, spec, cfg, threads=args.threads)
    write_output(args.out, cfg, report.to_json() + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    dgp = make_dgp(args.dgp)
    spec = _spec(args, dgp.problem, cfg)
    if args.n < 2 * cfg.folds:
        raise ConfigurationError(f"--n must be at least {2 * cfg.folds}")
    if args.reps < 1:
        raise ConfigurationError("--reps must be at least 1")
    table = run_study(dgp, cfg, args.reps, cfg.seed, args.n, spec=spec, threads=args.threads)
    out = Path(args.out)
    write_output(out, cfg, table.to_csv())
    write_output(_long_path(out), cfg, table.to_long_csv())
    return EXIT_OK


def _coverage_curve(dgp, spec, cfg, ns, reps, threads) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "reps", "coverage", "bias", "sd_theta", "mean_width", "failures"])
    for n in ns:
        s = run_study(dgp, cfg, reps, cfg.seed, n, spec=spec, threads=threads).summary
        w.writerow([n, s.reps, repr(s.coverage), repr(s.bias), repr(s.sd_theta), repr(s.mean_width), s.failures])
    return buf.getvalue()


def cmd_diagnose(args) -> int:
    if args.check not in CHECKS:
        raise ConfigurationError(f"unknown check {args.check!r}; valid checks: {', '.join(CHECKS)}")
    cfg = _config(args)
    dgp = make_dgp(args.dgp)
    spec = _spec(args, dgp.problem, cfg)
    if args.check == "orthogonality":
        body = check_orthogonality(dgp.problem, dgp, directions=args.directions, draws=args.draws or 100_000,
                                   seed=cfg.seed, levels=spec.levels).to_csv()
    elif args.check == "rates":
        n = args.n[0]
        train = dgp.generate(n, cfg.seed)
        fitted = spec.train(train, cfg)
        eval_data, _ = dgp.draw(args.draws or 20_000, stream(cfg.seed, "rates", "eval"))
        body = rows_to_csv(measure_rates(fitted, dgp, levels=spec.levels, n=n, data=eval_data))
    else:
        body = _coverage_curve(dgp, spec, cfg, args.n, args.reps, args.threads)
    write_output(args.out, cfg, body)
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UserInputError as exc:
        print(f"longdml: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER
    except EstimationError as exc:
        print(f"longdml: estimation failed: {_one_line(exc)}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"longdml: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
