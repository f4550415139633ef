"""Command line entry point: ``cotflow <command> --config run.json [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 invalid config or inputs, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import benchmarks, datasets
from .config import COMMAND_CONFIGS, dump_config, load_config
from .cond_wasserstein import empirical_cw
from .flow_model import Standardizer, load_checkpoint, train
from .metrics import MmdConfig, mmd_squared, w2_empirical
from .mcmc import DeMcConfig
from .ode_sampler import read_samples_csv, sample_posterior, write_samples_csv
from .ot_core import DiscreteMeasure, TransportError
from .plotting import kde1d_svg, scatter_svg

logger = logging.getLogger("cotflow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_generate(cfg, out: Path) -> None:
    if cfg.dataset == "lv":
        y, u = datasets.lv_dataset(cfg.n, seed=cfg.seed)
    else:
        m = datasets.sample_2d(datasets.Synthetic2DSpec(cfg.dataset, cfg.n, cfg.seed))
        y, u = m.y, m.u
    provenance = {"dataset": cfg.dataset, "n": cfg.n, "seed": cfg.seed, "generator": "cotflow.datasets"}
    datasets.write_dataset(out / "data.csv", y, u, provenance)


def cmd_train(cfg, out: Path) -> None:
    y, u = datasets.read_dataset(cfg.data)
    if cfg.d_y is not None and cfg.d_y != y.shape[1]:
        raise ValueError(f"d_y={cfg.d_y} but data has {y.shape[1]} y columns")
    if cfg.log_transform:
        if np.any(y <= 0) or np.any(u <= 0):
            raise ValueError("log_transform needs positive data")
        y, u = np.log(y), np.log(u)
    points = np.hstack([y, u])
    d_y = y.shape[1]
    scaler = Standardizer.fit(points, d_y) if cfg.standardize else Standardizer.identity(d_y, u.shape[1])
    tcfg = cfg.train.build(cfg.seed)
    result = train(benchmarks.product_source(y, u.shape[1]), benchmarks.fixed_target(points), tcfg, d_y=d_y,
                   standardizer=scaler)
    result.extra["log_transform"] = cfg.log_transform
    result.save(out / "checkpoint.json")
    result.write_losses(out / "losses.csv")


def cmd_sample(cfg, out: Path) -> None:
    params, scaler, meta = load_checkpoint(cfg.checkpoint)
    log_t = cfg.log_transform or bool(meta.get("extra", {}).get("log_transform", False))
    if cfg.y is not None:
        ys = np.asarray(cfg.y, dtype=float).reshape(1, -1)
    else:
        ys, _ = read_samples_csv(cfg.y_file)
    if ys.shape[1] != params.d_y:
        raise ValueError(f"checkpoint expects y of dimension {params.d_y}, got {ys.shape[1]}")
    rng = np.random.default_rng(cfg.seed)
    all_y, all_u = [], []
    for y in ys:
        y_model = np.log(y) if log_t else y
        u = sample_posterior(params, y_model, cfg.n, cfg=cfg.integrator.build(), rng=rng, standardizer=scaler)
        all_y.append(np.repeat(y[None, :], cfg.n, axis=0))
        all_u.append(np.exp(u) if log_t else u)
    write_samples_csv(out / "samples.csv", np.vstack(all_y), np.vstack(all_u))


def _eval_points(path, block: str):
    y, u = read_samples_csv(path)
    return (u if block == "u" else np.hstack([y, u])), y, u


def cmd_eval(cfg, out: Path) -> None:
    X, xy, xu = _eval_points(cfg.samples, cfg.block)
    Z, zy, zu = _eval_points(cfg.reference, cfg.block)
    if X.shape[1] != Z.shape[1]:
        raise ValueError("samples and reference have different column layouts")
    report = {"samples": cfg.samples, "reference": cfg.reference, "block": cfg.block, "seed": cfg.seed}
    if "w2" in cfg.metrics:
        report["w2"] = w2_empirical(X, Z, seed=cfg.seed, max_points=cfg.max_points)
    if "mmd" in cfg.metrics:
        report["mmd"] = mmd_squared(X, Z, MmdConfig(**cfg.mmd.model_dump()))
    if "cw" in cfg.metrics:
        report["cw"] = empirical_cw(DiscreteMeasure.from_yu(xy, xu), DiscreteMeasure.from_yu(zy, zu),
                                    epsilon=cfg.epsilon)
    _write_json(out / "report.json", report)


def cmd_benchmark(cfg, out: Path) -> None:
    tcfg = cfg.train.build(cfg.seed)
    integ = cfg.integrator.build()
    mmd = MmdConfig(**cfg.mmd.model_dump())
    if cfg.name == "2d":
        res = benchmarks.run_2d_benchmark(cfg.dataset, tcfg, n_train=cfg.n_train or 20_000, n_test=cfg.n_test,
                                          n_test_sets=cfg.n_test_sets, seed=cfg.seed, methods=tuple(cfg.methods),
                                          integrator=integ, mmd_cfg=mmd)
    else:
        kept = -(-cfg.n_post // cfg.mcmc_chains)
        demc = DeMcConfig(n_chains=cfg.mcmc_chains, n_steps=cfg.mcmc_burn_in + kept * cfg.mcmc_thin,
                          burn_in=cfg.mcmc_burn_in, thin=cfg.mcmc_thin, seed=cfg.seed)
        res = benchmarks.run_lv_benchmark(tcfg, n_train=cfg.n_train or 10_000, n_post=cfg.n_post, seed=cfg.seed,
                                          n_test_sets=cfg.n_test_sets, demc=demc, integrator=integ, mmd_cfg=mmd)
        write_samples_csv(out / "posterior_cotflow.csv", np.log(res.y_obs), res.flow_samples)
        write_samples_csv(out / "posterior_demc.csv", np.log(res.y_obs), res.mcmc_samples)
    logger.info("benchmark finished in %.1f s", res.runtime_s)
    table = res.table()
    (out / "table.txt").write_text(table + "\n")
    results = res.to_dict()
    results.pop("runtime_s", None)
    _write_json(out / "results.json", results)
    print(table)


def _column(path, name: str) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if name not in header:
        raise ValueError(f"column {name!r} not in {path}")
    return np.loadtxt(path, delimiter=",", skiprows=1, usecols=header.index(name), ndmin=1)


def cmd_plot(cfg, out: Path) -> None:
    target = out / cfg.filename
    if cfg.kind == "scatter":
        pts = np.column_stack([_column(cfg.samples, cfg.x), _column(cfg.samples, cfg.y)])
        ref = (np.column_stack([_column(cfg.reference, cfg.x), _column(cfg.reference, cfg.y)])
               if cfg.reference else None)
        scatter_svg(target, pts, ref, cfg.title, xlabel=cfg.x, ylabel=cfg.y)
    else:
        ref = _column(cfg.reference, cfg.column) if cfg.reference else None
        kde1d_svg(target, _column(cfg.samples, cfg.column), ref, cfg.title, xlabel=cfg.column)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "benchmark": cmd_benchmark,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cotflow", description="Conditional optimal transport flow matching.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_CONFIGS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default="cotflow-out", help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.seed)
    except (OSError, ValueError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / f"{args.command}.config.json")
    try:
        COMMANDS[args.command](cfg, out)
    except (FloatingPointError, TransportError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
