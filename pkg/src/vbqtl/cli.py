"""Batch front-end: data ingestion, cross-validated sparsity selection, run
orchestration and result persistence.

Command verbs: fit, simulate, permute-fdr, oracle-check, cross-validate.
A key = value config file can supply any flag; explicit flags take precedence.
Outputs are written to a staging directory and atomically renamed, so a failed
run never corrupts a previous complete one. Exit codes: 0 success, 1 usage
error, 2 data error, 3 numerical failure.
"""

import argparse
import dataclasses
import json
import logging
import math
import os
import shutil
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__, io
from .cavi import FitConfig, fit
from .errors import DataError, NumericalError
from .fdr import (declare_associations, default_threshold_grid,
                  empirical_fdr_curve, permute_and_refit, threshold_for_fdr)
from .model import (Hyperparameters, ModelSpec, corrected_hyperparameters,
                    standardize_inputs)
from .oracle import OracleConfig, elbo_tightness
from .sim import Block, SimulationSpec, generate_dataset

logger = logging.getLogger(__name__)

MODES = ("fit", "simulate", "permute-fdr", "oracle-check", "cross-validate")
WORKERS_ENV = "VBQTL_WORKERS"


@dataclass(frozen=True)
class RunConfig:
    mode: str
    x_path: str = None
    y_path: str = None
    out_dir: str = "vbqtl_output"
    # prior settings
    p_star: float = None
    p_star_grid: tuple = None
    eta: float = 1.0
    kappa: float = 1.0
    lambda_: float = 1.0
    nu: float = 1.0
    # fit settings
    tol: float = 1e-6
    maxit: int = 1000
    restarts: int = 1
    seed: int = 0
    workers: int = None
    # permutation FDR
    permutations: int = 400
    fdr_targets: tuple = (0.05, 0.10, 0.15, 0.20, 0.25)
    grid_size: int = 50
    # oracle check
    n_draws: int = 50_000
    # cross-validation
    folds: int = 3
    cv_score: str = "predictive"
    # simulation
    n: int = 250
    p: int = 1000
    d: int = 25
    p0: int = 20
    d0: int = 10
    p_add: float = 0.0
    target_pve: float = 0.1
    maf_low: float = 0.05
    maf_high: float = 0.5
    cov_structure: str = "independent"
    cov_block_size: int = None
    cov_rho: tuple = (0.0,)
    resp_structure: str = "independent"
    resp_block_size: int = None
    resp_rho: tuple = (0.0,)
    resp_p_add_weights: tuple = (1.0,)

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"unknown mode {self.mode!r}")
        if self.mode in ("fit", "permute-fdr", "oracle-check", "cross-validate"):
            if not self.x_path or not self.y_path:
                raise DataError(f"mode {self.mode!r} requires --x and --y")
        if self.mode == "cross-validate" and not self.p_star_grid:
            raise DataError("cross-validate requires --p-star-grid")

    def resolved_workers(self):
        if self.workers is not None:
            return max(1, int(self.workers))
        env = os.environ.get(WORKERS_ENV)
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


def _fit_config(cfg: RunConfig) -> FitConfig:
    return FitConfig(tol=cfg.tol, maxit=cfg.maxit, n_restarts=cfg.restarts,
                     seed=cfg.seed)


def _hyperparameters(cfg: RunConfig, p, d) -> Hyperparameters:
    if cfg.p_star is not None:
        if not 0 < cfg.p_star < p:
            raise DataError(f"p_star must lie in (0, p={p})")
        a, b = corrected_hyperparameters(p, d, cfg.p_star)
    else:
        a, b = np.ones(p), np.ones(p)
    return Hyperparameters(a=a, b=b, eta=np.full(d, cfg.eta),
                           kappa=np.full(d, cfg.kappa),
                           lambda_=cfg.lambda_, nu=cfg.nu)


def _load_spec(cfg: RunConfig):
    raw_X, raw_Y, x_cols, y_cols, _ = io.load_matrices(cfg.x_path, cfg.y_path)
    dataset = standardize_inputs(raw_X, raw_Y)
    hyper = _hyperparameters(cfg, dataset.p, dataset.d)
    return ModelSpec(dataset=dataset, hyper=hyper, p_star=cfg.p_star), x_cols, y_cols


@dataclass(frozen=True)
class CrossValidationResult:
    selected_p_star: float
    table: list  # rows: {"p_star", "fold_scores", "mean_score", "failed"}


def _fold_indices(n, folds, seed):
    perm = np.random.default_rng([int(seed), 97]).permutation(n)
    return np.array_split(perm, folds)


def _predictive_score(train_X, train_Y, test_X, test_Y, hyper, config):
    train = standardize_inputs(train_X, train_Y)
    spec = ModelSpec(dataset=train, hyper=hyper)
    result = fit(spec, config)
    mX = train_X.mean(axis=0)
    sdX = train_X.std(axis=0, ddof=1)
    Xte = (test_X - mX) / sdX
    Yte = test_Y - train_Y.mean(axis=0)
    pred = Xte @ result.beta_mean
    var = 1.0 / result.tau_mean
    logpdf = -0.5 * (np.log(2 * np.pi * var)[None, :] + (Yte - pred) ** 2 / var[None, :])
    return float(logpdf.mean()), result


def cross_validate_pstar(dataset, grid, folds=3, config=FitConfig(),
                         base=None, score="predictive") -> CrossValidationResult:
    """Grid search over the prior expected number of active covariates.

    Each training split is re-standardized before fitting. The default score is
    the mean held-out Gaussian predictive log-density under the posterior
    means; score="elbo" instead uses the training lower bound (exposed for
    comparison, not as an out-of-sample criterion). Ties break toward the
    smaller, sparser value.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise DataError("p_star grid is empty")
    if dataset.n < 3 * folds:
        raise DataError(f"need n >= {3 * folds} samples for {folds}-fold CV")
    fold_idx = _fold_indices(dataset.n, folds, config.seed)
    base = base or {}
    table = []
    for p_star in grid:
        a, b = corrected_hyperparameters(dataset.p, dataset.d, p_star)
        hyper = Hyperparameters(
            a=a, b=b,
            eta=base.get("eta", np.ones(dataset.d)),
            kappa=base.get("kappa", np.ones(dataset.d)),
            lambda_=base.get("lambda_", 1.0), nu=base.get("nu", 1.0),
        )
        scores, failed = [], False
        for test in fold_idx:
            train = np.setdiff1d(np.arange(dataset.n), test)
            try:
                if score == "predictive":
                    s, _ = _predictive_score(
                        dataset.X[train], dataset.Y[train],
                        dataset.X[test], dataset.Y[test], hyper, config,
                    )
                else:
                    ds = standardize_inputs(dataset.X[train], dataset.Y[train])
                    s = float(fit(ModelSpec(ds, hyper), config).elbo_trace[-1])
            except (NumericalError, DataError) as exc:
                logger.warning("p_star=%s fold failed: %s", p_star, exc)
                failed = True
                scores.append(None)
                continue
            scores.append(s)
        mean = None if failed else float(np.mean(scores))
        table.append({"p_star": p_star, "fold_scores": scores,
                      "mean_score": mean, "failed": failed})
    valid = [row for row in table if not row["failed"]]
    if not valid:
        raise NumericalError("every p_star candidate had a failed fold")
    best = max(valid, key=lambda r: (r["mean_score"], -r["p_star"]))
    return CrossValidationResult(selected_p_star=best["p_star"], table=table)


def _parse_float_list(text):
    return tuple(float(x) for x in str(text).split(",") if x != "")


def _blocks(total, structure, block_size, rhos, weights=None):
    size = block_size or total
    sizes = [size] * (total // size)
    if total % size:
        sizes.append(total % size)
    blocks = []
    for i, sz in enumerate(sizes):
        kw = {}
        if weights is not None:
            kw["p_add_weight"] = weights[i % len(weights)]
        blocks.append(Block(size=sz, structure=structure,
                            rho=rhos[i % len(rhos)], **kw))
    return blocks


def _simulation_spec(cfg: RunConfig) -> SimulationSpec:
    return SimulationSpec(
        n=cfg.n, p=cfg.p, d=cfg.d, p0=cfg.p0, d0=cfg.d0,
        maf_range=(cfg.maf_low, cfg.maf_high),
        covariate_blocks=_blocks(cfg.p, cfg.cov_structure, cfg.cov_block_size,
                                 cfg.cov_rho),
        response_blocks=_blocks(cfg.d, cfg.resp_structure, cfg.resp_block_size,
                                cfg.resp_rho, cfg.resp_p_add_weights),
        p_add=cfg.p_add, target_pve=cfg.target_pve, seed=cfg.seed,
    )


def _write_fit_artifacts(out, result, x_cols, y_cols):
    p = len(x_cols)
    io.save_matrix(out / "ppi.tsv", result.ppi, x_cols, y_cols)
    io.save_matrix(out / "beta_mean.tsv", result.beta_mean, x_cols, y_cols)
    order = np.argsort(-result.omega_mean, kind="stable")
    ranks = np.empty(p, dtype=int)
    ranks[order] = np.arange(1, p + 1)
    with open(out / "omega.tsv", "w") as fh:
        fh.write("covariate\tomega_mean\trank\n")
        for s in range(p):
            fh.write(f"{x_cols[s]}\t{result.omega_mean[s]:.17g}\t{ranks[s]}\n")
    with open(out / "elbo_trace.tsv", "w") as fh:
        fh.write("iteration\telbo\n")
        for k, v in enumerate(result.elbo_trace, start=1):
            fh.write(f"{k}\t{v:.17g}\n")


def _write_manifest(out, cfg, started, extra):
    manifest = {
        "config": dataclasses.asdict(cfg),
        "version": __version__,
        "seed": cfg.seed,
        "wall_time_s": time.time() - started,
    }
    manifest.update(extra)
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def run(cfg: RunConfig) -> int:
    """Dispatch a configured run and persist its artifacts atomically."""
    from pathlib import Path

    started = time.time()
    final = Path(cfg.out_dir)
    staging = final.with_name(final.name + f".staging-{os.getpid()}")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        extra = _dispatch(cfg, staging)
        _write_manifest(staging, cfg, started, extra)
        if final.exists():
            backup = final.with_name(final.name + ".previous")
            if backup.exists():
                shutil.rmtree(backup)
            os.replace(final, backup)
            os.replace(staging, final)
            shutil.rmtree(backup)
        else:
            os.replace(staging, final)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return 0


def _dispatch(cfg: RunConfig, out):
    if cfg.mode == "simulate":
        data = generate_dataset(_simulation_spec(cfg))
        samples = [f"s{i}" for i in range(cfg.n)]
        io.save_matrix(out / "X.tsv", data.genotypes,
                       samples, [f"snp{j}" for j in range(cfg.p)])
        io.save_matrix(out / "Y.tsv", data.dataset.Y + 0.0,
                       samples, [f"resp{t}" for t in range(cfg.d)])
        io.save_truth(out / "truth.tsv", data.beta_true)
        return {"mode_info": {"n_associations": int(data.gamma_true.sum())}}

    spec, x_cols, y_cols = _load_spec(cfg)
    fc = _fit_config(cfg)

    if cfg.mode == "fit":
        result = fit(spec, fc)
        _write_fit_artifacts(out, result, x_cols, y_cols)
        return {"iterations": result.iterations, "converged": result.converged}

    if cfg.mode == "oracle-check":
        if spec.dataset.p > 15:
            raise DataError(
                f"oracle-check enumerates 2^p inclusion patterns and refuses "
                f"p={spec.dataset.p} > 15"
            )
        result = fit(spec, fc)
        report = elbo_tightness(spec.dataset, spec.hyper, result,
                                OracleConfig(n_draws=cfg.n_draws, seed=cfg.seed))
        with open(out / "tightness.json", "w") as fh:
            json.dump(dataclasses.asdict(report), fh, indent=2)
        return {"iterations": result.iterations, "converged": result.converged,
                "relative_gap": report.relative_gap}

    if cfg.mode == "cross-validate":
        cv = cross_validate_pstar(spec.dataset, cfg.p_star_grid,
                                  folds=cfg.folds, config=fc, score=cfg.cv_score)
        with open(out / "cv_scores.tsv", "w") as fh:
            fh.write("p_star\t" + "\t".join(f"fold{f}" for f in range(cfg.folds))
                     + "\tmean\tfailed\n")
            for row in cv.table:
                cells = ["NA" if s is None else f"{s:.17g}" for s in row["fold_scores"]]
                mean = "NA" if row["mean_score"] is None else f"{row['mean_score']:.17g}"
                fh.write(f"{row['p_star']}\t" + "\t".join(cells)
                         + f"\t{mean}\t{int(row['failed'])}\n")
        return {"selected_p_star": cv.selected_p_star}

    # permute-fdr
    grid = default_threshold_grid(cfg.grid_size)
    run_rec = permute_and_refit(spec, fc, cfg.permutations, seed=cfg.seed,
                                thresholds=grid, n_workers=cfg.resolved_workers())
    curve = empirical_fdr_curve(run_rec)
    with open(out / "fdr_curve.tsv", "w") as fh:
        fh.write("threshold\tfdr\tobserved\tpermuted_median\tno_discoveries\n")
        med = np.median(run_rec.permuted_counts, axis=0)
        for k, tau in enumerate(curve.thresholds):
            fh.write(f"{tau:.17g}\t{curve.fdr[k]:.17g}\t{run_rec.observed_counts[k]}"
                     f"\t{med[k]:.17g}\t{int(curve.no_discoveries[k])}\n")
    result = fit(spec, fc)
    thresholds = {}
    with open(out / "thresholds.tsv", "w") as fh:
        fh.write("target_fdr\tthreshold\tn_declared\n")
        for target in cfg.fdr_targets:
            tau_hat = threshold_for_fdr(curve, target)
            thresholds[target] = tau_hat
            if tau_hat is None:
                fh.write(f"{target}\tNA\t0\n")
                continue
            decl = declare_associations(result.ppi, tau_hat)
            fh.write(f"{target}\t{tau_hat:.17g}\t{len(decl.pairs)}\n")
    primary = thresholds.get(cfg.fdr_targets[-1])
    with open(out / "declarations.tsv", "w") as fh:
        fh.write("covariate\tresponse\tppi\n")
        if primary is not None:
            for s, t in declare_associations(result.ppi, primary).pairs:
                fh.write(f"{x_cols[s]}\t{y_cols[t]}\t{result.ppi[s, t]:.17g}\n")
    return {"iterations": result.iterations, "converged": result.converged}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="vbqtl", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--out-dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    fitlike = argparse.ArgumentParser(add_help=False)
    fitlike.add_argument("--x", dest="x_path")
    fitlike.add_argument("--y", dest="y_path")
    fitlike.add_argument("--p-star", type=float)
    fitlike.add_argument("--eta", type=float)
    fitlike.add_argument("--kappa", type=float)
    fitlike.add_argument("--lambda", dest="lambda_", type=float)
    fitlike.add_argument("--nu", type=float)
    fitlike.add_argument("--tol", type=float)
    fitlike.add_argument("--maxit", type=int)
    fitlike.add_argument("--restarts", type=int)

    sub.add_parser("fit", parents=[common, fitlike])
    pf = sub.add_parser("permute-fdr", parents=[common, fitlike])
    pf.add_argument("--permutations", type=int)
    pf.add_argument("--fdr-targets", type=_parse_float_list)
    pf.add_argument("--grid-size", type=int)
    oc = sub.add_parser("oracle-check", parents=[common, fitlike])
    oc.add_argument("--n-draws", type=int)
    cv = sub.add_parser("cross-validate", parents=[common, fitlike])
    cv.add_argument("--p-star-grid", type=_parse_float_list)
    cv.add_argument("--folds", type=int)
    cv.add_argument("--cv-score", choices=("predictive", "elbo"))
    sim = sub.add_parser("simulate", parents=[common])
    for name, typ in (("n", int), ("p", int), ("d", int), ("p0", int), ("d0", int),
                      ("p-add", float), ("target-pve", float),
                      ("maf-low", float), ("maf-high", float),
                      ("cov-block-size", int), ("resp-block-size", int)):
        sim.add_argument(f"--{name}", type=typ)
    sim.add_argument("--cov-structure", choices=("independent", "autocorrelated",
                                                 "equicorrelated"))
    sim.add_argument("--resp-structure", choices=("independent", "autocorrelated",
                                                  "equicorrelated"))
    sim.add_argument("--cov-rho", type=_parse_float_list)
    sim.add_argument("--resp-rho", type=_parse_float_list)
    sim.add_argument("--resp-p-add-weights", type=_parse_float_list)
    return parser


_TUPLE_KEYS = {"p_star_grid", "fdr_targets", "cov_rho", "resp_rho",
               "resp_p_add_weights"}
_INT_KEYS = {"seed", "workers", "maxit", "restarts", "permutations", "grid_size",
             "n_draws", "folds", "n", "p", "d", "p0", "d0", "cov_block_size",
             "resp_block_size"}
_STR_KEYS = {"mode", "x_path", "y_path", "out_dir", "cv_score", "cov_structure",
             "resp_structure"}


def _read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}: line {lineno} is not key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if key in _TUPLE_KEYS:
                values[key] = _parse_float_list(value)
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _STR_KEYS:
                values[key] = value
            else:
                values[key] = float(value)
    return values


def config_from_args(argv):
    args = vars(_build_parser().parse_args(argv))
    file_values = {}
    if args.get("config"):
        file_values = _read_config_file(args["config"])
    args.pop("config", None)
    merged = dict(file_values)
    merged.update({k: v for k, v in args.items() if v is not None})
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(merged) - fields
    if unknown:
        raise DataError(f"unknown configuration keys: {sorted(unknown)}")
    return RunConfig(**merged)


def run_from_manifest(manifest_path) -> int:
    """Reproduce a run from its persisted manifest."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    stored = manifest["config"]
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for k, v in stored.items():
        if k in fields:
            kwargs[k] = tuple(v) if isinstance(v, list) else v
    return run(RunConfig(**kwargs))


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(argv if argv is not None else sys.argv[1:])
        return run(cfg)
    except SystemExit as exc:
        return exc.code or 0
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
