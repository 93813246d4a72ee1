"""Command-line interface.

Exit codes: 0 on success, 1 on runtime or numerical failure, 2 on usage or
input validation errors.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import Optional

from threadpoolctl import threadpool_limits

from . import io
from .config import ConfigError, EvalConfig, RunConfig, load_config
from .datagen import generate
from .evaluation import lambda_sweep, predict_eval, sparsity, top_terms
from .solver import SolverError, fit, transform

logger = logging.getLogger("groundnmf")


class UsageError(Exception):
    pass


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    solver = cfg.solver
    if getattr(args, "lam", None) is not None:
        solver = solver.replace(lam=args.lam)
    if getattr(args, "restarts", None) is not None:
        solver = solver.replace(n_restarts=args.restarts)
    if getattr(args, "no_simplex", False):
        solver = solver.replace(simplex_enabled=False)
    changes = {"solver": solver}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "deterministic", False):
        changes["deterministic"] = True
    ev = cfg.eval
    if getattr(args, "mode", None) is not None:
        ev = EvalConfig(**{**ev.__dict__, "mode": args.mode})
    if getattr(args, "lambdas", None) is not None:
        ev = EvalConfig(**{**ev.__dict__, "lambdas": args.lambdas})
    if getattr(args, "top_k", None) is not None:
        ev = EvalConfig(**{**ev.__dict__, "top_k": args.top_k})
    changes["eval"] = ev
    return cfg.replace(**changes)


def _read_inputs(args):
    names = io.read_names(args.features) if getattr(args, "features", None) else None
    X = io.read_matrix(args.X)
    if names is not None and len(names) != X.n_features:
        raise UsageError(f"{args.features} lists {len(names)} names but {args.X} has {X.n_features} rows")
    if X.n_columns == 0:
        raise UsageError(f"{args.X}: matrix has no columns (N = 0)")
    if X.n_features == 0:
        raise UsageError(f"{args.X}: matrix has no rows (d = 0)")
    supports = None
    if getattr(args, "supports", None):
        supports = io.read_supports(args.supports)
        if len(supports) != X.n_columns:
            raise UsageError(f"dimension mismatch: {args.supports} has {len(supports)} columns "
                             f"but {args.X} has {X.n_columns}")
    return X, supports, names


def _print_table(header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    print("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


def cmd_gen(args, cfg: RunConfig) -> int:
    inst = generate(cfg.gen, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_matrix(out / "X.txt", inst.X)
    io.write_supports(out / "supports.txt", inst.supports_true)
    io.write_names(out / "features.txt", inst.X.feature_names)
    files = ["X.txt", "supports.txt", "features.txt", "truth/"]
    if inst.labels is not None:
        io.write_labels(out / "labels.txt", inst.labels)
        files.append("labels.txt")
    provenance = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    io.write_model(out / "truth", inst.model, feature_names=inst.X.feature_names,
                   column_ids=inst.X.column_ids, extra=provenance)
    manifest = {
        "command": "gen",
        "config": cfg.to_dict(),
        "files": files,
        "theta": None if inst.theta is None else [float(v) for v in inst.theta],
        **provenance,
    }
    io.write_json(out / "manifest.json", manifest)
    print(f"wrote instance d={cfg.gen.d} N={cfg.gen.N} K={cfg.gen.K} nnz={inst.X.nnz} to {out}")
    return 0


def cmd_fit(args, cfg: RunConfig) -> int:
    X, supports, names = _read_inputs(args)
    solver = cfg.solver_config
    if supports is None and solver.n_components is None:
        raise UsageError("without a supports file, solver.n_components must be set in the config")
    model, report = fit(X, supports, solver)
    sp = sparsity(model, cfg.eval.zero_tol, cfg.eval.min_terms)
    out = Path(args.out)
    io.write_model(out, model, feature_names=names,
                   extra={"config_hash": cfg.config_hash(), "seed": cfg.seed,
                          "deterministic": cfg.deterministic})
    io.write_json(out / "report.json", report.to_dict())
    print(f"final divergence: {io.fmt(report.final_objective)}")
    print(f"median sparsity: {sp.median_nnz:g} (third quartile {sp.third_quartile_nnz:g})")
    print(f"outer iterations: {report.outer_iterations}, converged: {report.converged}")
    return 0


def cmd_transform(args, cfg: RunConfig) -> int:
    loaded = io.read_model(args.model)
    X, supports, _ = _read_inputs(args)
    model = loaded.model
    if X.n_features != model.n_features:
        raise UsageError(f"dimension mismatch: {args.X} has {X.n_features} rows, "
                         f"model has {model.n_features} features")
    if supports is not None and supports.n_conditions != model.n_components:
        raise UsageError(f"dimension mismatch: {args.supports} uses {supports.n_conditions} "
                         f"conditions, model has {model.n_components}")
    W = transform(X, model, supports, cfg.solver_config.replace(lam=model.lam))
    io.write_table(args.out, "condition", io.default_names("column_", X.n_columns),
                    loaded.condition_names, W)
    print(f"wrote loadings for {X.n_columns} columns to {args.out}")
    return 0


def _eval_sparsity(args, cfg: RunConfig) -> int:
    loaded = io.read_model(args.model)
    rep = sparsity(loaded.model, cfg.eval.zero_tol, cfg.eval.min_terms)
    _print_table(["condition", "nnz"], list(zip(loaded.condition_names, rep.per_column_nnz)))
    print(f"median {rep.median_nnz:g}  third quartile {rep.third_quartile_nnz:g}  "
          f"min_terms_ok {rep.min_terms_ok}")
    if args.out:
        io.write_json(args.out, rep.to_dict())
    return 0


def _eval_sweep(args, cfg: RunConfig) -> int:
    X, supports, _ = _read_inputs(args)
    rows = lambda_sweep(X, supports, list(cfg.eval.lambdas), cfg.solver_config,
                        cfg.eval.zero_tol, cfg.eval.min_terms)
    table = []
    for r in rows:
        if r.error:
            table.append([f"{r.lam:g}", "error", "-", "-", r.error])
        else:
            table.append([f"{r.lam:g}", io.fmt(r.divergence), f"{r.sparsity.median_nnz:g}",
                          f"{r.sparsity.third_quartile_nnz:g}", ""])
    _print_table(["lambda", "divergence", "median_nnz", "q3_nnz", "error"], table)
    if args.out:
        io.write_json(args.out, {"rows": [
            {"lambda": r.lam, "divergence": None if r.error else r.divergence,
             "sparsity": None if r.sparsity is None else r.sparsity.to_dict(), "error": r.error}
            for r in rows]})
    return 1 if all(r.error for r in rows) else 0


def _eval_predict(args, cfg: RunConfig) -> int:
    X, supports, _ = _read_inputs(args)
    labels = io.read_labels(args.labels)
    if labels.size != X.n_columns:
        raise UsageError(f"dimension mismatch: {args.labels} has {labels.size} labels "
                         f"but {args.X} has {X.n_columns} columns")
    ev = cfg.eval
    rep = predict_eval(X, supports, labels, ev.mode, cfg.solver_config, n_folds=ev.n_folds,
                       strength_grid=ev.strength_grid, penalty=ev.penalty, seed=cfg.seed)
    _print_table(["fold", "auroc", "sensitivity", "specificity", "C"],
                 [[i + 1, f"{f.auroc:.4f}", f"{f.sensitivity:.4f}", f"{f.specificity:.4f}", f"{f.strength:g}"]
                  for i, f in enumerate(rep.per_fold)])
    print(f"mean auroc {rep.mean_auroc:.4f} ({rep.std_auroc:.4f})")
    if rep.nonzero_raw_feature_fraction is not None:
        print(f"nonzero raw feature fraction {rep.nonzero_raw_feature_fraction:.4f}")
    if args.out:
        io.write_json(args.out, rep.to_dict())
    return 0


def _eval_top_terms(args, cfg: RunConfig) -> int:
    loaded = io.read_model(args.model)
    terms = top_terms(loaded.model, loaded.feature_names, cfg.eval.top_k)
    for cond, ranked in zip(loaded.condition_names, terms):
        print(f"{cond}: " + ", ".join(f"{n} ({w:.4g})" for n, w in ranked))
    if args.out:
        io.write_json(args.out, {c: [[n, w] for n, w in t] for c, t in zip(loaded.condition_names, terms)})
    return 0


_EVAL = {"sparsity": _eval_sparsity, "sweep": _eval_sweep, "predict": _eval_predict,
         "top-terms": _eval_top_terms}


def cmd_eval(args, cfg: RunConfig) -> int:
    return _EVAL[args.which](args, cfg)


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _common(p, solver=True):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", help="single-threaded, reproducible run")
    if solver:
        p.add_argument("--lambda", dest="lam", type=float, help="scaled-simplex sum of each phenotype")
        p.add_argument("--restarts", type=int)
        p.add_argument("--no-simplex", action="store_true", help="drop the simplex constraint on A")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundnmf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic planted instance")
    _common(p, solver=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit the constrained factorization")
    p.add_argument("X")
    p.add_argument("supports")
    p.add_argument("--features", help="feature names, one per line")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transform", help="infer loadings for new columns")
    p.add_argument("X")
    p.add_argument("--model", required=True)
    p.add_argument("--supports")
    p.add_argument("--out", required=True)
    _common(p, solver=False)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("eval", help="evaluation reports")
    esub = p.add_subparsers(dest="which", required=True)
    e = esub.add_parser("sparsity")
    e.add_argument("--model", required=True)
    e.add_argument("--out")
    _common(e, solver=False)
    e = esub.add_parser("sweep")
    e.add_argument("X")
    e.add_argument("supports")
    e.add_argument("--lambdas", type=_float_list)
    e.add_argument("--out")
    _common(e)
    e = esub.add_parser("predict")
    e.add_argument("X")
    e.add_argument("supports")
    e.add_argument("labels")
    e.add_argument("--mode", choices=["loadings", "raw", "augmented"])
    e.add_argument("--out")
    _common(e)
    e = esub.add_parser("top-terms")
    e.add_argument("--model", required=True)
    e.add_argument("--top-k", type=int)
    e.add_argument("--out")
    _common(e, solver=False)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_run_config(args)
        # single BLAS thread keeps floating-point reductions reproducible
        limit = threadpool_limits(1) if cfg.deterministic else contextlib.nullcontext()
        with limit:
            return args.func(args, cfg)
    except (UsageError, ConfigError, io.FormatError) as exc:
        print(f"groundnmf: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"groundnmf: invalid input: {exc}", file=sys.stderr)
        return 2
    except (SolverError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"groundnmf: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
