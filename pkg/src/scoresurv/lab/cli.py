"""Command-line interface: ``scoresurv <subcommand> ...``.

Run configs are single JSON files. Reports go to ``--out`` as CSV plus a
rendered text table. Fatal errors print a message and exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from scoresurv.competing import CompetingRisksModel, fit_cr
from scoresurv.core import load_csv, make_grid, save_csv
from scoresurv.engine import FitConfig
from scoresurv.lab import experiments as ex
from scoresurv.lab.gradcheck import run_gradcheck
from scoresurv.lab.io import (
    load_model,
    predictions_from_matrix,
    read_predictions,
    save_model,
    write_cif,
    write_predictions,
)
from scoresurv.lab.simulate import DgpConfig, simulate
from scoresurv.score import evaluate_at_quantile

logger = logging.getLogger("scoresurv")


def _read_json(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_simulate(args) -> int:
    cfg = DgpConfig(kind=args.kind, family=args.family, n=args.n, seed=args.seed,
                    censoring_rate=args.censoring_rate)
    data = simulate(cfg)
    save_csv(data, args.out)
    print(f"wrote {data.n} rows ({data.n_events} events) to {args.out}")
    return 0


def cmd_fit(args) -> int:
    cfg = _read_json(args.config)
    data = load_csv(args.data)
    family = cfg.get("family", "parametric")
    rule = cfg.get("rule", "risbs")
    fit_cfg = FitConfig(**cfg.get("fit", {}))
    opts = cfg.get("model", {})
    if "hidden" in opts:
        opts["hidden"] = tuple(opts["hidden"])
    trace = None
    if family == "competing":
        fitted = fit_cr(cfg.get("variant", "parametric"), data, rule, config=fit_cfg,
                        J=cfg.get("J", 30), orientation=cfg.get("orientation", "conventional"), **opts)
        model, trace = fitted.model, fitted.result
    elif family in ex.SR_METHODS or family in ("km", "cox_mle", "aft_mle"):
        model = ex.fit_method(family, data, rule, fit_cfg, J=cfg.get("J", 30),
                              orientation=cfg.get("orientation", "conventional"), **opts)
    else:
        from scoresurv.model import fit_scoring
        fitted = fit_scoring(family, data, rule, config=fit_cfg, J=cfg.get("J", 30),
                             orientation=cfg.get("orientation", "conventional"), **opts)
        model, trace = fitted.model, fitted.result
    save_model(model, args.out)
    if args.trace and trace is not None:
        Path(args.trace).write_text(trace.trace_csv(), encoding="utf-8")
    print(f"wrote {family} model to {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    data = load_csv(args.data)
    grid = getattr(model, "grid", None)
    if args.J or grid is None:
        grid = make_grid(data, args.J or 100, args.quantile)
    if isinstance(model, CompetingRisksModel):
        write_cif(args.out, model.cif_matrix(data.X, grid.times), grid.times)
    else:
        write_predictions(args.out, model.survival_matrix(data.X, grid.times), grid.times)
    print(f"wrote predictions for {data.n} subjects to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    data = load_csv(args.data)
    times, S = read_predictions(args.predictions)
    if S.shape[0] != data.n:
        raise ValueError(f"{S.shape[0]} prediction rows for {data.n} records")
    preds = predictions_from_matrix(times, S, args.interpolation)
    scores = {}
    for q in args.quantiles:
        scores[f"Q{round(100 * q)}"] = evaluate_at_quantile(args.rule, data, preds, q,
                                                            orientation=args.orientation)
    out = json.dumps({"rule": args.rule, "scores": scores}, indent=2)
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    print(out)
    return 0


def _run_report(args, cfg_cls, runner, stem) -> int:
    cfg = cfg_cls.from_dict(_read_json(args.config))
    report = runner(cfg)
    paths = report.write(args.out, stem)
    print(report.render())
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_gradcheck(args) -> int:
    cases = run_gradcheck(args.n_configs, args.seed, args.h)
    worst = max((c.max_rel_error for c in cases), default=0.0)
    for c in cases:
        print(f"{c.family:10s} {c.rule:6s} params={c.n_params:3d} rel={c.max_rel_error:.2e}")
    ok = len(cases) == args.n_configs and worst <= args.tol
    print(f"{len(cases)} configurations, max relative error {worst:.2e}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scoresurv", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset to CSV")
    p.add_argument("--kind", default="aft_simple", choices=["aft_simple", "complex", "competing"])
    p.add_argument("--family", default="lognormal")
    p.add_argument("--n", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--censoring-rate", type=float, default=0.28)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON with family, rule, J, fit, model")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="optional training-trace CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="survival (or CIF) matrix for a CSV dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--J", type=int, default=0, help="grid size (default: model grid, else 100)")
    p.add_argument("--quantile", type=float, default=0.9)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rule", default="risbs")
    p.add_argument("--quantiles", type=float, nargs="+", default=[0.25, 0.5, 0.75])
    p.add_argument("--orientation", default="conventional", choices=["paper", "conventional"])
    p.add_argument("--interpolation", default="step", choices=["step", "linear"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    for name, cls, runner, stem, helptext in [
        ("bench", ex.BenchmarkConfig, ex.run_benchmark, "benchmark", "repeated-subsampling benchmark"),
        ("recover", ex.RecoveryConfig, ex.run_recovery, "recovery", "coefficient recovery study"),
        ("ablate", ex.AblationConfig, ex.run_ablation, "ablation", "train-rule by eval-rule matrix"),
        ("competing", ex.CompetingConfig, ex.run_competing, "competing", "competing-risks benchmark"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=lambda a, c=cls, r=runner, s=stem: _run_report(a, c, r, s))

    p = sub.add_parser("gradcheck", help="reverse-mode vs finite-difference check")
    p.add_argument("--n-configs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, ArithmeticError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
