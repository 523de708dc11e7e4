"""End-to-end runs behind the command-line interface."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io, plotting
from .config import RunConfig
from .dataset import (SplitBundle, build_dataset, generate_synthetic, kcore_filter,
                      load_movielens, load_processed, save_processed, split)
from .evaluation import evaluate
from .graph import build_normalized_adjacency
from .model import ModelConfig, final_embeddings, item_similarity, variant_config
from .trainer import TrainReport, fit, grad_check, variant_grid

log = logging.getLogger(__name__)

ALPHA_GRID = (0.0, 0.01, 0.05, 0.1, 0.5)
LAMBDA_GRID = (0.1, 0.5, 1.0, 1.5, 2.0, 5.0)
LAYER_GRID = (0, 1, 2, 3)

ABLATION_COLUMNS = (
    "variant", "seed", "status", "K", "alpha", "lam", "nonlinear", "include_layer0", "mode",
    "side", "valid_recall10", "valid_ndcg10", "test_recall10", "test_ndcg10", "best_epoch",
    "epochs_run", "train_seconds", "total_seconds", "error",
)


def prepare_data(cfg: RunConfig) -> tuple[SplitBundle, dict]:
    """Load or generate interactions, filter, remap and split them."""
    stats: dict = {"source": cfg.source}
    if cfg.source == "processed":
        bundle = load_processed(cfg.data_path)
        return bundle, stats
    if cfg.source == "movielens":
        records = load_movielens(cfg.data_path, cfg.rating_threshold)
        stats["thresholded_interactions"] = len(records)
        pairs = kcore_filter(records, cfg.k_core)
        dataset = build_dataset(pairs)
    else:
        dataset = generate_synthetic(cfg.synthetic)
        if cfg.k_core > 1:
            u, i = kcore_filter((dataset.users, dataset.items), cfg.k_core)
            dataset = build_dataset((u, i))
    stats.update(num_users=dataset.num_users, num_items=dataset.num_items,
                 num_interactions=dataset.num_interactions, density=dataset.density)
    return split(dataset, cfg.ratios, cfg.seed), stats


def cmd_prepare(cfg: RunConfig) -> Path:
    bundle, stats = prepare_data(cfg)
    out = Path(cfg.out)
    save_processed(out, bundle, {k: v for k, v in stats.items() if k not in
                                 ("num_users", "num_items", "num_interactions")})
    (out / "config.txt").write_text(cfg.to_text())
    return out


@dataclass
class TrainResult:
    params: np.ndarray
    report: TrainReport
    test: object
    valid: object


def train_and_test(bundle: SplitBundle, model: ModelConfig, cfg: RunConfig) -> TrainResult:
    params, report = fit(bundle, model, cfg.train_config)
    adj = build_normalized_adjacency(bundle.train, dtype=params.dtype)
    test = evaluate(params, bundle, model, "test", adj=adj)
    valid = evaluate(params, bundle, model, "valid", adj=adj)
    return TrainResult(params, report, test, valid)


def cmd_train(cfg: RunConfig, bundle: SplitBundle | None = None) -> TrainResult:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    if bundle is None:
        bundle, _ = prepare_data(cfg)
    result = train_and_test(bundle, cfg.model, cfg)
    io.save_checkpoint(out / "checkpoint.bin", result.params, cfg.model.to_dict(),
                       bundle.train.num_users, bundle.train.num_items, cfg.seed,
                       result.report.best_epoch)
    io.write_train_report(out, result.report)
    io.write_json(out / "metrics_test.json", result.test.to_dict())
    io.write_json(out / "metrics_valid.json", result.valid.to_dict())
    if cfg.model.mode == "slim" and cfg.model.side == "item":
        adj = build_normalized_adjacency(bundle.train, dtype=np.float64)
        _, I = final_embeddings(result.params.astype(np.float64), adj, cfg.model)
        io.export_similarity(out / "similarity.bin", item_similarity(I), cfg.model.embedding_dim)
    if result.report.epochs:
        plotting.plot_training_curves(result.report, out / "training_curves.png",
                                      title=f"K={cfg.model.K} alpha={cfg.model.alpha}")
    return result


def cmd_evaluate(checkpoint, cfg: RunConfig, phase: str = "test", out=None,
                 per_user: bool = False):
    header, params = io.load_checkpoint(checkpoint)
    model = ModelConfig.from_dict(header["config"])
    bundle, _ = prepare_data(cfg)
    if (bundle.train.num_users, bundle.train.num_items) != (header["M"], header["N"]):
        raise ValueError(f"checkpoint is for {header['M']}x{header['N']} but the data is "
                         f"{bundle.train.num_users}x{bundle.train.num_items}")
    report = evaluate(params, bundle, model, phase, per_user=per_user)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / f"metrics_{phase}.json", report.to_dict())
        if per_user:
            io.write_per_user_csv(out / f"per_user_{phase}.csv", report.per_user)
    return report


# -- ablation ----------------------------------------------------------------

def expand_variants(tokens: list[str], base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """Turn variant tokens into named configs.

    A token is a variant name (``GCNSLIM+0-LR``), optionally followed by
    ``:key=value,...`` overrides, or one of the sweeps ``layers``, ``alpha``
    and ``lambda`` which expand over the standard grids.
    """
    if not tokens:
        raise ValueError("empty variant list")
    out = []
    for token in tokens:
        token = token.strip()
        if token == "layers":
            out += [(f"GCNSLIM:K={k}", variant_config("GCNSLIM", base, K=k)) for k in LAYER_GRID]
        elif token == "alpha":
            out += [(f"GCNSLIM:alpha={a}", variant_config("GCNSLIM", base, alpha=a))
                    for a in ALPHA_GRID]
        elif token == "lambda":
            out += [(f"GCNSLIM:lambda={v}", variant_config("GCNSLIM", base, lam=v))
                    for v in LAMBDA_GRID]
        else:
            name, _, spec = token.partition(":")
            overrides = {}
            for item in filter(None, spec.split(",")):
                key, _, value = item.partition("=")
                key = "lam" if key == "lambda" else key
                like = getattr(ModelConfig, key)
                overrides[key] = (value.lower() in ("1", "true", "yes")) if isinstance(like, bool) \
                    else type(like)(value)
            out.append((token, variant_config(name, base, **overrides)))
    return out


def cmd_ablate(cfg: RunConfig, tokens: list[str], bundles: dict | None = None) -> list[dict]:
    """Train every variant for every seed; failed runs are recorded, not fatal."""
    variants = expand_variants(tokens, cfg.model)
    seeds = cfg.seeds or (cfg.seed,)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    bundles = dict(bundles or {})
    rows = []
    for seed in seeds:
        seeded = replace(cfg, seed=seed)
        if seed not in bundles:
            bundles[seed], _ = prepare_data(seeded)
        for name, model in variants:
            row = {"variant": name, "seed": seed, "K": model.K, "alpha": model.alpha,
                   "lam": model.lam, "nonlinear": model.nonlinear,
                   "include_layer0": model.include_layer0, "mode": model.mode, "side": model.side}
            t0 = time.perf_counter()
            try:
                res = train_and_test(bundles[seed], model, seeded)
            except Exception as exc:  # one failed run must not stop the sweep
                log.exception("variant %s seed %s failed", name, seed)
                row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            else:
                row.update(status="ok", error="",
                           valid_recall10=res.valid.recall_at_n, valid_ndcg10=res.valid.ndcg_at_n,
                           test_recall10=res.test.recall_at_n, test_ndcg10=res.test.ndcg_at_n,
                           best_epoch=res.report.best_epoch, epochs_run=len(res.report.epochs),
                           train_seconds=round(res.report.seconds_to_best, 3))
            row["total_seconds"] = round(time.perf_counter() - t0, 3)
            rows.append(row)
            log.info("%s seed=%s %s", name, seed, row.get("test_ndcg10", row.get("error")))
    io.write_rows_csv(out / "ablation.csv", rows, ABLATION_COLUMNS)
    io.write_json(out / "ablation.json", {"rows": rows, "summary": summarize(rows)})
    if any(r["status"] == "ok" for r in rows):
        plotting.plot_ablation(rows, out / "ablation.png")
        plotting.plot_training_time(rows, out / "training_time.png")
        for param in ("K", "alpha", "lam"):
            plotting.plot_sweep(rows, param, out / f"sweep_{param}.png")
    return rows


def summarize(rows: list[dict]) -> dict:
    """Per-variant means over successful seeds."""
    summary: dict = {}
    for name in dict.fromkeys(r["variant"] for r in rows):
        ok = [r for r in rows if r["variant"] == name and r["status"] == "ok"]
        entry = {"runs": len(ok), "failed": sum(1 for r in rows
                                                 if r["variant"] == name and r["status"] != "ok")}
        for key in ("test_recall10", "test_ndcg10", "valid_ndcg10", "train_seconds"):
            entry[key] = float(np.mean([r[key] for r in ok])) if ok else math.nan
        summary[name] = entry
    return summary


# -- gradient check ----------------------------------------------------------

def cmd_gradcheck(epsilon: float = 1e-4, seed: int = 0, tolerance: float = 1e-4,
                  linear_tolerance: float | None = None, only: str | None = None,
                  sizes: tuple[int, int, int] = (8, 6, 4)) -> list[dict]:
    """Check every variant; a row fails when its error exceeds its tolerance."""
    rows = []
    for name, model in variant_grid(dim=sizes[2]):
        if only is not None and only not in name:
            continue
        err = grad_check(model, sizes, epsilon, seed)
        tol = tolerance
        if linear_tolerance is not None and not model.nonlinear:
            tol = linear_tolerance
        rows.append({"variant": name, "linear": not model.nonlinear, "max_rel_error": err,
                     "tolerance": tol, "passed": bool(err < tol)})
    return rows

