"""Training loops: the conditioned autoencoder-GAN and the frozen classifier.

The GAN step alternates a discriminator update with a joint generator plus
encoder update.  Everything the generator sees from the classifier (the
conditioning vector, the KL target, the perceptual features) comes from a
frozen network; a run with conditioning disabled zeroes the condition input
and forces the KL weight to zero so the column logs as exactly 0.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .core import digest_of
from .losses import (
    LOG_COLUMNS,
    LossReport,
    LossWeights,
    PathLengthRegularizer,
    adversarial_losses,
    classifier_kl,
    feature_distance,
    perceptual_net_for,
)
from .models import ConvClassifier, ModelBundle, save_bundle


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the GAN loop.

    Zero learning rates are permitted (useful for exercising the loop as a
    pure no-op); zero steps never touches the weights.
    """

    steps: int
    batch_size: int = 16
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    betas: tuple[float, float] = (0.0, 0.99)
    weights: LossWeights = field(default_factory=LossWeights)
    cst_enabled: bool = True
    seed: int = 0
    reg_interval: int = 8
    checkpoint_every: int = 1000
    log_every: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("learning rates must be >= 0")
        if self.reg_interval < 1:
            raise ValueError("reg_interval must be >= 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if not self.cst_enabled and self.weights.w_cls != 0.0:
            object.__setattr__(self, "weights", replace(self.weights, w_cls=0.0))

    def to_json_dict(self) -> dict:
        return {
            "steps": self.steps,
            "batch_size": self.batch_size,
            "lr_g": self.lr_g,
            "lr_d": self.lr_d,
            "betas": list(self.betas),
            "weights": self.weights.to_json_dict(),
            "cst_enabled": self.cst_enabled,
            "seed": self.seed,
            "reg_interval": self.reg_interval,
            "checkpoint_every": self.checkpoint_every,
        }


def _dataset_images(dataset) -> np.ndarray:
    images = getattr(dataset, "images", dataset)
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"expected images of shape (N, 3, R, R), got {images.shape}")
    return images


class Trainer:
    """Holds the optimizers and regularizer state across steps."""

    def __init__(self, bundle: ModelBundle, config: TrainConfig):
        if bundle.cst_enabled != config.cst_enabled:
            raise ValueError(
                f"bundle cst_enabled={bundle.cst_enabled} does not match config cst_enabled={config.cst_enabled}"
            )
        bundle.verify_classifier_frozen()
        self.bundle = bundle
        self.config = config
        gen_params = list(bundle.generator.parameters()) + list(bundle.encoder.parameters())
        self.opt_g = torch.optim.Adam(gen_params, lr=config.lr_g, betas=config.betas)
        self.opt_d = torch.optim.Adam(bundle.discriminator.parameters(), lr=config.lr_d, betas=config.betas)
        self.path_reg = PathLengthRegularizer()
        self.step_index = 0

    def train_step(self, batch: np.ndarray) -> LossReport:
        bundle, config = self.bundle, self.config
        weights = config.weights
        x = batch if isinstance(batch, torch.Tensor) else bundle._images_to_tensor(np.asarray(batch, dtype=np.float32))
        if x.shape[0] < 1:
            raise ValueError("empty batch")

        with torch.no_grad():
            probs_orig = F.softmax(bundle.classifier(x), dim=1)
            condition = probs_orig if config.cst_enabled else torch.zeros_like(probs_orig)

        w = bundle.encoder(x)
        x_fake, _ = bundle.generator(w, condition)

        d_real = bundle.discriminator(x)
        d_fake = bundle.discriminator(x_fake.detach())
        _, d_term = adversarial_losses(d_real, d_fake)
        self.opt_d.zero_grad(set_to_none=True)
        (weights.w_adv * d_term).backward()
        self.opt_d.step()

        adv_g = F.softplus(-bundle.discriminator(x_fake)).mean()
        rec_x = (x_fake - x).abs().mean()
        lpips = feature_distance(perceptual_net_for(x.shape[-1], device=x.device, dtype=x.dtype), x, x_fake)
        rec_w = (bundle.encoder(x_fake) - w).abs().mean()
        if config.cst_enabled and weights.w_cls > 0:
            cls = classifier_kl(F.softmax(bundle.classifier(x_fake), dim=1), probs_orig)
        else:
            cls = torch.zeros((), dtype=torch.float32, device=x.device)
        if self.step_index % config.reg_interval == 0:
            reg = self.path_reg.penalty(bundle.generator, w.detach(), condition)
        else:
            reg = torch.zeros((), dtype=torch.float32, device=x.device)

        total = (
            weights.w_adv * adv_g
            + weights.w_reg * reg
            + weights.w_rec_x * rec_x
            + weights.w_lpips * lpips
            + weights.w_rec_w * rec_w
            + weights.w_cls * cls
        )
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()

        report = LossReport(
            adv_g=float(adv_g.item()),
            adv_d=float(d_term.item()),
            reg=float(reg.item()),
            rec_x=float(rec_x.item()),
            lpips=float(lpips.item()),
            rec_w=float(rec_w.item()),
            cls=float(cls.item()),
            total=float(total.item()),
        )
        self.step_index += 1
        bundle.training_step += 1
        return report


def train_step(bundle: ModelBundle, batch: np.ndarray, config: TrainConfig) -> LossReport:
    """One-shot step with fresh optimizer state; prefer Trainer for loops."""
    return Trainer(bundle, config).train_step(batch)


def train(bundle: ModelBundle, dataset, config: TrainConfig, run_dir: str | None = None):
    """Run the alternating loop for config.steps and return (bundle, reports).

    The batch order, initialization noise, and regularizer noise are all
    seeded, so two runs from the same starting bundle and config produce
    identical logs.  When run_dir is given, writes training_log.csv, periodic
    checkpoints under checkpoints/, and a final gan.pt with its manifest.
    """
    images = _dataset_images(dataset)
    resolution = bundle.spec.image_resolution
    if images.shape[2] != resolution or images.shape[3] != resolution:
        raise ValueError(
            f"dataset resolution {images.shape[2]}x{images.shape[3]} does not match "
            f"generator resolution {resolution}x{resolution}"
        )
    if images.shape[0] < config.batch_size:
        raise ValueError(f"dataset of {images.shape[0]} images is smaller than batch_size {config.batch_size}")

    torch.manual_seed(config.seed)
    order_gen = torch.Generator().manual_seed(config.seed)
    trainer = Trainer(bundle, config)

    log_file = None
    log_writer = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        log_file = open(os.path.join(run_dir, "training_log.csv"), "w", newline="")
        log_writer = csv.writer(log_file)
        log_writer.writerow(LOG_COLUMNS)

    reports: list[LossReport] = []
    manifest_extra = {
        "train_config": config.to_json_dict(),
        "loss_weights": config.weights.to_json_dict(),
        "seed": config.seed,
        "cst_enabled": config.cst_enabled,
        "config_digest": digest_of(config.to_json_dict()),
    }
    try:
        order = torch.randperm(images.shape[0], generator=order_gen).numpy()
        cursor = 0
        for step in range(config.steps):
            if cursor + config.batch_size > images.shape[0]:
                order = torch.randperm(images.shape[0], generator=order_gen).numpy()
                cursor = 0
            batch = images[order[cursor : cursor + config.batch_size]]
            cursor += config.batch_size
            report = trainer.train_step(batch)
            reports.append(report)
            if log_writer is not None and step % config.log_every == 0:
                log_writer.writerow(report.csv_row(step).split(","))
                log_file.flush()
            if run_dir is not None and (step + 1) % config.checkpoint_every == 0:
                ckpt_dir = os.path.join(run_dir, "checkpoints")
                os.makedirs(ckpt_dir, exist_ok=True)
                save_bundle(bundle, os.path.join(ckpt_dir, f"step_{step + 1:06d}.pt"), manifest_extra)
    finally:
        if log_file is not None:
            log_file.close()

    if run_dir is not None:
        save_bundle(bundle, os.path.join(run_dir, "gan.pt"), manifest_extra)
    return bundle, reports


def write_log_csv(reports: list[LossReport], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for step, report in enumerate(reports):
            writer.writerow(report.csv_row(step).split(","))


@dataclass(frozen=True)
class ClassifierTrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    val_fraction: float = 0.1
    seed: int = 0
    base_channels: int = 32
    max_channels: int = 128

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
            "base_channels": self.base_channels,
            "max_channels": self.max_channels,
        }


class ClassifierAccuracyError(RuntimeError):
    """Raised when a classifier misses the accuracy bar for downstream use."""


def require_classifier_accuracy(accuracy: float, minimum: float = 0.9) -> float:
    """Gate: refuse to hand a weak classifier to the GAN or the search."""
    if accuracy < minimum:
        raise ClassifierAccuracyError(
            f"classifier held-out accuracy {accuracy:.4f} is below the required {minimum:.2f}; "
            "explanations of a near-random classifier would be meaningless"
        )
    return accuracy


def evaluate_classifier(classifier: ConvClassifier, images: np.ndarray, labels: np.ndarray) -> float:
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    was_training = classifier.training
    classifier.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, images.shape[0], 256):
            x = torch.from_numpy(images[start : start + 256])
            pred = classifier(x).argmax(dim=1).numpy()
            correct += int((pred == labels[start : start + 256]).sum())
    if was_training:
        classifier.train()
    return correct / max(1, images.shape[0])


def train_classifier(images: np.ndarray, labels: np.ndarray, config: ClassifierTrainConfig | None = None):
    """Train the frozen-to-be classifier; returns (classifier, held-out accuracy).

    With val_fraction == 0 the accuracy is measured on the training set
    itself (useful for tiny sanity datasets); otherwise a seeded split is
    held out before any gradient step.
    """
    config = config or ClassifierTrainConfig()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"expected images of shape (N, 3, R, R), got {images.shape}")
    if images.shape[0] != labels.shape[0]:
        raise ValueError("images and labels length mismatch")
    num_classes = int(labels.max()) + 1
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if set(np.unique(labels).tolist()) != set(range(num_classes)):
        raise ValueError("labels must cover 0..num_classes-1")

    torch.manual_seed(config.seed)
    resolution = images.shape[2]
    classifier = ConvClassifier(
        resolution=resolution,
        num_classes=num_classes,
        base_channels=config.base_channels,
        max_channels=config.max_channels,
    )

    n = images.shape[0]
    perm = torch.randperm(n, generator=torch.Generator().manual_seed(config.seed)).numpy()
    val_count = int(round(n * config.val_fraction))
    if config.val_fraction > 0 and val_count < 1:
        val_count = 1
    val_idx = perm[:val_count]
    train_idx = perm[val_count:]
    if train_idx.size == 0:
        raise ValueError("no training examples left after the held-out split")

    optimizer = torch.optim.Adam(classifier.parameters(), lr=config.lr)
    order_gen = torch.Generator().manual_seed(config.seed + 1)
    classifier.train()
    for _ in range(config.epochs):
        order = train_idx[torch.randperm(train_idx.size, generator=order_gen).numpy()]
        for start in range(0, order.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = torch.from_numpy(images[idx])
            y = torch.from_numpy(labels[idx])
            logits = classifier(x)
            loss = F.cross_entropy(logits, y)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            if not torch.isfinite(loss):
                raise RuntimeError("classifier training diverged (non-finite loss)")
    classifier.eval()

    if val_count > 0:
        accuracy = evaluate_classifier(classifier, images[val_idx], labels[val_idx])
    else:
        accuracy = evaluate_classifier(classifier, images, labels)
    return classifier, accuracy


def save_training_manifest(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
