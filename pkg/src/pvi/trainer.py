"""Training loop, evaluation sweep and run manifests.

One model is trained per lambda with plain Adam, fixed learning rate and a
fixed batch order, so a seeded run is bit-reproducible. Per-cloud geometry
(neighbour graphs, supports, decoder labels) is computed once and reused all
epochs; kernel maps are rebuilt per pass to bound memory.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import container
from .geometry import PointSet, estimate_normals
from .metrics import bpp as bpp_metric
from .metrics import d1_psnr, d2_psnr
from .model import CloudGeometry, EncoderContext, ModelConfig, PviModel
from .nn import adam_step, save_checkpoint

LAMBDA_GRID = (0.1, 0.5, 1.0, 2.0, 3.0)


@dataclass
class TrainRunConfig:
    lam: float
    epochs: int = 25
    batch_size: int = 8
    lr: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if min(self.lam, self.epochs, self.batch_size, self.lr) <= 0:
            raise ValueError("training settings must be positive")


def train_model(model: PviModel, clouds: list[PointSet], run: TrainRunConfig,
                geoms: list[CloudGeometry] | None = None,
                verbose: bool = False) -> list[dict]:
    """Train in place; returns one log row per epoch (mean L, L_dist, L_rate)."""
    if geoms is None:
        geoms = [CloudGeometry.build(c, model.cfg) for c in clouds]
    params = model.store.parameters()
    log = []
    for epoch in range(run.epochs):
        sums = np.zeros(3)
        for start in range(0, len(clouds), run.batch_size):
            batch = range(start, min(start + run.batch_size, len(clouds)))
            model.store.zero_grad()
            for idx in batch:
                ctx = EncoderContext.from_geometry(geoms[idx])
                rng = np.random.default_rng((run.seed, epoch, idx))
                total, terms = model.loss_graph(ctx, run.lam, rng)
                ad.scale(total, 1.0 / len(batch)).backward()
                sums += (terms.total, terms.distortion, terms.rate)
            adam_step(params, run.lr)
        row = {"epoch": epoch + 1, "loss": sums[0] / len(clouds),
               "distortion": sums[1] / len(clouds), "rate": sums[2] / len(clouds)}
        log.append(row)
        if verbose:
            print(f"[lam={run.lam}] epoch {row['epoch']:3d}  "
                  f"L={row['loss']:.5f}  dist={row['distortion']:.5f}  "
                  f"rate={row['rate']:.4f}", flush=True)
    return log


def evaluate_model(model: PviModel, clouds: list[PointSet], names: list[str],
                   lam: float, with_d2: bool = True) -> list[dict]:
    """Compress + decompress every cloud; returns RD rows in the CSV schema."""
    rows = []
    for cloud, name in zip(clouds, names):
        blob = container.compress(cloud, model)
        rec = container.decompress(blob, model)
        row = {"name": name, "lambda": lam,
               "bpp": bpp_metric(len(blob), len(cloud)),
               "d1_psnr": d1_psnr(cloud, rec)}
        if with_d2:
            normals = estimate_normals(cloud, k=min(16, len(cloud)))
            row["d2_psnr"] = d2_psnr(cloud, rec, normals)
        else:
            row["d2_psnr"] = float("nan")
        rows.append(row)
    return rows


def write_rd_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["name", "lambda", "bpp",
                                                "d1_psnr", "d2_psnr"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_rd_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"name": r["name"], "lambda": float(r["lambda"]), "bpp": float(r["bpp"]),
                 "d1_psnr": float(r["d1_psnr"]), "d2_psnr": float(r["d2_psnr"])}
                for r in csv.DictReader(fh)]


def write_train_log(log: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "distortion", "rate"])
        writer.writeheader()
        for row in log:
            writer.writerow(row)


def run_training(cfg: ModelConfig, clouds: list[PointSet], lambdas, out_dir,
                 epochs: int = 25, batch_size: int = 8, lr: float = 1e-5,
                 seed: int = 0, verbose: bool = False) -> dict:
    """Train one model per lambda; writes checkpoints, logs and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geoms = [CloudGeometry.build(c, cfg) for c in clouds]
    manifest = {"config": asdict(cfg), "seed": seed, "epochs": epochs,
                "batch_size": batch_size, "lr": lr, "runs": []}
    for lam in lambdas:
        t0 = time.process_time()
        model = PviModel(cfg, seed=seed)
        run = TrainRunConfig(lam, epochs, batch_size, lr, seed)
        log = train_model(model, clouds, run, geoms, verbose=verbose)
        cpu_s = time.process_time() - t0
        ckpt = out / f"lambda_{lam:g}.ckpt"
        log_path = out / f"train_log_lambda_{lam:g}.csv"
        save_checkpoint(ckpt, model.store.state_dict())
        write_train_log(log, log_path)
        manifest["runs"].append({"lambda": lam, "checkpoint": ckpt.name,
                                 "log": log_path.name, "cpu_seconds": cpu_s})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def load_manifest(out_dir) -> dict:
    with open(Path(out_dir) / "manifest.json") as fh:
        return json.load(fh)
