"""Probabilistic multi-blur training.

Every step picks one blur scale ``j`` with fixed probabilities, widens all
cones of the batch by the kernel size ``k_j`` (in pixels) and regresses the
rendered colours onto the matching pre-blurred images. Training always
runs with a zero aperture.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .field import AdamState, FieldParams, adam_step, learning_rate, save_checkpoint
from .render import Camera, ConeBatch, NeuralField, composite_backward, image_cones, render_cones

log = logging.getLogger(__name__)

DEFAULT_KERNEL_SIZES = (1, 3, 7, 15, 31, 51)
DEFAULT_KERNEL_PROBS = (0.3, 0.2, 0.2, 0.1, 0.1, 0.1)
SIGMA_RULE = "sigma = size / 4, radius = (size - 1) / 2, truncated and renormalised"


def gaussian_kernel(size: int) -> np.ndarray:
    """1-D Gaussian taps for an odd kernel ``size`` (``sigma = size/4``)."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if size == 1:
        return np.ones(1)
    sigma = size / 4.0
    x = np.arange(size) - (size - 1) / 2
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    return taps / taps.sum()


def blur_image(img, size: int) -> np.ndarray:
    """Separable Gaussian blur with edge clamping; size 1 returns an exact copy."""
    img = np.asarray(img, dtype=np.float64)
    if size == 1:
        gaussian_kernel(size)
        return img.copy()
    taps = gaussian_kernel(size)
    out = correlate1d(img, taps, axis=0, mode="nearest")
    return correlate1d(out, taps, axis=1, mode="nearest")


@dataclass
class BlurBank:
    sizes: tuple
    probs: np.ndarray
    kernels: list
    datasets: list  # one (n_images, H, W, 3) array per size

    def __post_init__(self):
        if len(self.sizes) != len(self.probs):
            raise ValueError("one probability per kernel size")
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("kernel probabilities must be non-negative and sum to 1")
        self.probs = p

    @property
    def m(self) -> int:
        return len(self.sizes)


def build_blur_bank(images, sizes=DEFAULT_KERNEL_SIZES, probs=DEFAULT_KERNEL_PROBS) -> BlurBank:
    """Blur every image with every kernel size (size 1 keeps the originals)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    kernels = [gaussian_kernel(s) for s in sizes]
    datasets = [np.stack([blur_image(im, s) for im in images]) for s in sizes]
    return BlurBank(tuple(int(s) for s in sizes), np.asarray(probs, dtype=np.float64), kernels, datasets)


def sample_scale(rng, bank: BlurBank) -> tuple[int, int]:
    j = int(rng.choice(bank.m, p=bank.probs))
    return j, bank.sizes[j]


@dataclass
class TrainConfig:
    batch_size: int = 1024
    total_steps: int = 20000
    coarse_weight: float = 0.1
    lr_init: float = 5e-4
    lr_final: float = 5e-5
    seed: int = 0
    n_coarse: int = 64
    n_fine: int = 64
    kernel_sizes: tuple = DEFAULT_KERNEL_SIZES
    kernel_probs: tuple = DEFAULT_KERNEL_PROBS
    eval_every: int = 250
    eval_pixels: int = 512
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.coarse_weight < 0:
            raise ValueError("coarse loss weight must be >= 0")
        if self.total_steps < 0:
            raise ValueError("total steps must be >= 0")


DESK = TrainConfig()
FULL = TrainConfig(batch_size=4096, total_steps=600_000, n_coarse=128, n_fine=128)


@dataclass
class TrainingData:
    """Pixel cones of all training views plus their blurred colours."""

    cameras: list
    bank: BlurBank
    cones: ConeBatch
    targets: list  # per scale, (n_pixels, 3)
    near: float
    far: float

    @classmethod
    def build(cls, cameras: list[Camera], bank: BlurBank) -> "TrainingData":
        if not cameras:
            raise ValueError("empty dataset")
        for cam in cameras:
            if cam.lens.aperture != 0:
                raise ValueError("training cameras must have a zero aperture")
        parts = [image_cones(cam) for cam in cameras]
        cones = ConeBatch(
            np.concatenate([p.centers for p in parts]),
            np.concatenate([p.dirs for p in parts]),
            np.concatenate([p.cos_theta for p in parts]),
            np.concatenate([p.slope for p in parts]),
            0.0,
            cameras[0].lens.focus_distance,
        )
        targets = [d.reshape(-1, 3) for d in bank.datasets]
        if targets[0].shape[0] != len(cones):
            raise ValueError("image sizes do not match the cameras")
        return cls(cameras, bank, cones, targets, cameras[0].near, cameras[0].far)

    def __len__(self):
        return len(self.cones)


def scaled(cones: ConeBatch, k: float) -> ConeBatch:
    return replace(cones, slope=cones.slope * k)


@dataclass
class LossResult:
    loss: float
    coarse: float
    fine: float
    grads: FieldParams | None
    fine_rgb: np.ndarray
    fine_edges: np.ndarray


def loss_and_grad(params: FieldParams, cones: ConeBatch, target, near, far, n_coarse, n_fine, coarse_weight, rng=None, fine_edges=None, need_grad=True) -> LossResult:
    """Batch-mean of ``lambda*|C_coarse - target|^2 + |C_fine - target|^2``.

    Gradients treat the fine partition as fixed (no gradient flows through
    importance resampling).
    """
    if cones.aperture != 0:
        raise ValueError("training requires a zero aperture")
    field = NeuralField(params)
    res = render_cones(field, cones, near, far, n_coarse, n_fine, rng, fine_edges)
    target = np.asarray(target, dtype=np.float64)
    b = len(cones)
    dc = res.coarse.comp.rgb - target
    df = res.fine.comp.rgb - target
    lc = float(np.sum(dc * dc)) / b
    lf = float(np.sum(df * df)) / b
    grads = None
    if need_grad:
        grads = params.zeros_like()
        for pas, d in ((res.fine, 2.0 * df / b), (res.coarse, 2.0 * coarse_weight * dc / b)):
            d_sigma, d_rgb = composite_backward(pas.sigma, pas.rgb, pas.deltas, pas.comp, d)
            grads += field.backward(pas.acts, d_sigma.reshape(-1), d_rgb.reshape(-1, 3))
    return LossResult(coarse_weight * lc + lf, lc, lf, grads, res.fine.comp.rgb, res.fine.edges)


def psnr(mse) -> float:
    mse = float(mse)
    return float("inf") if mse <= 0 else -10.0 * np.log10(mse)


@dataclass
class StepResult:
    step: int
    scale_index: int
    scale: int
    loss: float
    coarse: float
    fine: float
    psnr: float


def train_step(params: FieldParams, state: AdamState, data: TrainingData, config: TrainConfig, rng, step: int) -> StepResult:
    """One p-training step; updates ``params`` and ``state`` in place."""
    if data.cones.aperture != 0:
        raise AssertionError("p-training only runs with a zero aperture")
    j, k = sample_scale(rng, data.bank)
    idx = rng.integers(0, len(data), config.batch_size)
    cones = scaled(data.cones.take(idx), k)
    res = loss_and_grad(
        params, cones, data.targets[j][idx], data.near, data.far,
        config.n_coarse, config.n_fine, config.coarse_weight, rng,
    )
    adam_step(params, res.grads, state, learning_rate(step, config.total_steps, config.lr_init, config.lr_final))
    return StepResult(step, j, k, res.loss, res.coarse, res.fine, psnr(res.fine / 3.0))


def evaluate_scales(params: FieldParams, data: TrainingData, idx, config: TrainConfig, chunk: int = 1024) -> list[float]:
    """PSNR at every blur scale on fixed pixels, against the matching blurred images."""
    out = []
    for j, k in enumerate(data.bank.sizes):
        cones = scaled(data.cones.take(idx), k)
        err = 0.0
        for s in range(0, len(idx), chunk):
            sub = cones.take(slice(s, s + chunk))
            res = render_cones(params, sub, data.near, data.far, config.n_coarse, config.n_fine)
            err += float(np.sum((res.fine.comp.rgb - data.targets[j][idx[s : s + chunk]]) ** 2))
        out.append(psnr(err / (3 * len(idx))))
    return out


HISTORY_FIELDS = ("step", "scale_index", "coarse_loss", "fine_loss", "psnr")
EVAL_FIELDS = ("step", "scale_index", "kernel_size", "psnr")


@dataclass
class TrainResult:
    params: FieldParams
    history: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    seconds: float = 0.0


def write_train_manifest(path, config: TrainConfig, dataset: str = "", extra: dict | None = None) -> None:
    """Human-readable ``key: value`` record of the training setup."""
    rows = {
        "dataset": dataset,
        "kernel_sizes": ",".join(str(s) for s in config.kernel_sizes),
        "kernel_probs": ",".join(f"{p:g}" for p in config.kernel_probs),
        "sigma_rule": SIGMA_RULE,
        "coarse_weight": config.coarse_weight,
        "lr_schedule": f"log-linear {config.lr_init:g} -> {config.lr_final:g} over {config.total_steps} steps",
        "seed": config.seed,
        "batch_size": config.batch_size,
        "n_coarse": config.n_coarse,
        "n_fine": config.n_fine,
        **(extra or {}),
    }
    with open(path, "w") as fh:
        for k, v in rows.items():
            fh.write(f"{k}: {v}\n")


def train(params: FieldParams, data: TrainingData, config: TrainConfig, out_dir=None, meta: dict | None = None) -> TrainResult:
    """Run ``config.total_steps`` p-training steps from ``params`` (modified in place).

    With ``out_dir`` the per-step history goes to ``history.csv``, the
    per-scale evaluation to ``eval.csv`` and checkpoints to ``field.ckpt``.
    """
    rng = np.random.default_rng(config.seed)
    eval_rng = np.random.default_rng(config.seed + 1)
    eval_idx = np.sort(eval_rng.choice(len(data), size=min(config.eval_pixels, len(data)), replace=False))
    state = AdamState.like(params)
    result = TrainResult(params)
    meta = {**(meta or {}), "train": _config_dict(config)}

    out = Path(out_dir) if out_dir is not None else None
    hist_fh = eval_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        hist_fh = open(out / "history.csv", "w", newline="")
        eval_fh = open(out / "eval.csv", "w", newline="")
        hist_w = csv.writer(hist_fh)
        eval_w = csv.writer(eval_fh)
        hist_w.writerow(HISTORY_FIELDS)
        eval_w.writerow(EVAL_FIELDS)

    def run_eval(step):
        scores = evaluate_scales(params, data, eval_idx, config)
        for j, (k, p) in enumerate(zip(data.bank.sizes, scores)):
            row = (step, j, k, p)
            result.evals.append(row)
            if eval_fh:
                eval_w.writerow(row)
        log.info("step %d eval psnr %s", step, " ".join(f"{p:.2f}" for p in scores))

    t0 = time.perf_counter()
    try:
        for step in range(config.total_steps):
            r = train_step(params, state, data, config, rng, step)
            row = (r.step, r.scale_index, r.coarse, r.fine, r.psnr)
            result.history.append(row)
            if hist_fh:
                hist_w.writerow(row)
            done = step + 1
            if config.eval_every and done % config.eval_every == 0:
                run_eval(done)
            if out is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
                save_checkpoint(out / "field.ckpt", params, done, meta)
    finally:
        if hist_fh:
            hist_fh.close()
            eval_fh.close()
    result.seconds = time.perf_counter() - t0
    if out is not None:
        save_checkpoint(out / "field.ckpt", params, config.total_steps, {**meta, "train_seconds": result.seconds})
    return result


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["kernel_sizes"] = list(config.kernel_sizes)
    d["kernel_probs"] = list(config.kernel_probs)
    return d
