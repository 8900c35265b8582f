"""The four training loss terms and their weighted sum.

Generator-side total = adversarial (non-saturating logistic) + lazy path
length regularization + three-part reconstruction (pixel L1, perceptual,
latent L1) + KL of the classifier's output on the reconstruction against its
output on the original.  The perceptual part stands in for LPIPS using a
frozen random-weight conv net with fixed weights per resolution.  It must
NOT reuse the frozen classifier's features: that would leak the classifier
into every run and quietly re-condition generators trained with
``cst_enabled=False``, hollowing out the conditioning ablation.  Pass any
module with a compatible ``features(x)`` if a dedicated backbone is wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import torch
import torch.nn.functional as F

from .models import ConvClassifier

GENERATOR_TERMS = ("adv_g", "reg", "rec_x", "lpips", "rec_w", "cls")

LOG_COLUMNS = ("step", "adv_g", "adv_d", "reg", "rec_x", "lpips", "rec_w", "cls", "total")


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights; the paper's sum is unweighted, so defaults are 1
    except the path regularizer's conventional 2.0 (applied lazily)."""

    w_adv: float = 1.0
    w_reg: float = 2.0
    w_rec_x: float = 1.0
    w_lpips: float = 1.0
    w_rec_w: float = 1.0
    w_cls: float = 1.0

    def __post_init__(self):
        for name in ("w_adv", "w_reg", "w_rec_x", "w_lpips", "w_rec_w", "w_cls"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def to_json_dict(self) -> dict:
        return {
            "w_adv": self.w_adv,
            "w_reg": self.w_reg,
            "w_rec_x": self.w_rec_x,
            "w_lpips": self.w_lpips,
            "w_rec_w": self.w_rec_w,
            "w_cls": self.w_cls,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LossWeights":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class LossReport:
    """One training step's scalar loss terms."""

    adv_g: float
    adv_d: float
    reg: float
    rec_x: float
    lpips: float
    rec_w: float
    cls: float
    total: float

    def __post_init__(self):
        for name in ("adv_g", "adv_d", "reg", "rec_x", "lpips", "rec_w", "cls", "total"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"loss term {name} is not finite: {v}")
        for name in ("cls", "rec_x", "lpips", "rec_w", "reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss term {name} must be >= 0, got {getattr(self, name)}")

    def csv_row(self, step: int) -> str:
        values = [str(step)] + [
            f"{getattr(self, name):.8g}" for name in LOG_COLUMNS[1:]
        ]
        return ",".join(values)


def _as_float_tensor(value) -> torch.Tensor:
    t = value if isinstance(value, torch.Tensor) else torch.as_tensor(value, dtype=torch.float32)
    if not torch.isfinite(t).all():
        raise ValueError("non-finite input")
    return t


def adversarial_losses(d_real, d_fake) -> tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating logistic terms: (generator term, discriminator term).

    generator = softplus(-d_fake); discriminator = softplus(-d_real) +
    softplus(d_fake); batched scores are averaged per term.
    """
    d_real = _as_float_tensor(d_real)
    d_fake = _as_float_tensor(d_fake)
    generator_term = F.softplus(-d_fake).mean()
    discriminator_term = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
    return generator_term, discriminator_term


def classifier_kl(probs_generated, probs_original) -> torch.Tensor:
    """D_KL[ C(x') || C(x) ] in nats, averaged over a batch if given rows.

    Probabilities are clamped to 1e-8 inside the logs; a zero generated
    probability contributes exactly zero (0 * log eps multiplies out).
    """
    p_new = _as_float_tensor(probs_generated)
    p_old = _as_float_tensor(probs_original)
    if p_new.shape != p_old.shape:
        raise ValueError(f"distribution shapes differ: {tuple(p_new.shape)} vs {tuple(p_old.shape)}")
    if p_new.dim() == 1:
        p_new = p_new[None]
        p_old = p_old[None]
    if p_new.dim() != 2 or p_new.shape[1] < 2:
        raise ValueError(f"expected probability rows, got shape {tuple(p_new.shape)}")
    for name, p in (("generated", p_new), ("original", p_old)):
        if (p < -1e-8).any() or (p.sum(dim=1) - 1.0).abs().max() > 1e-5:
            raise ValueError(f"{name} rows are not probability distributions")
    eps = 1e-8
    log_ratio = torch.log(p_new.clamp(min=eps)) - torch.log(p_old.clamp(min=eps))
    # per-row KL is mathematically >= 0; the clamp only absorbs float roundoff
    kl = (p_new * log_ratio).sum(dim=1).clamp(min=0.0)
    return kl.mean()


PERCEPTUAL_SEED = 7  # fixed so every run measures with the same random net

_perceptual_nets: dict[tuple[int, str, str], ConvClassifier] = {}


def perceptual_net_for(resolution: int, device=None, dtype=None) -> ConvClassifier:
    """Frozen random-weight feature extractor for perceptual distances.

    Weights depend only on the resolution (drawn from a dedicated seed in a
    forked RNG, so construction never perturbs a caller's random stream),
    making the distance identical across runs and independent of any trained
    classifier.
    """
    device = torch.device(device) if device is not None else torch.device("cpu")
    dtype = dtype or torch.float32
    key = (int(resolution), str(device), str(dtype))
    net = _perceptual_nets.get(key)
    if net is None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(PERCEPTUAL_SEED)
            net = ConvClassifier(int(resolution), num_classes=2, base_channels=16, max_channels=64)
        net = net.to(device=device, dtype=dtype)
        net.requires_grad_(False)
        net.eval()
        _perceptual_nets[key] = net
    return net


def feature_distance(feature_net, x: torch.Tensor, x_prime: torch.Tensor) -> torch.Tensor:
    """Perceptual distance over a feature extractor's maps.

    Per layer: unit-normalize along channels at each spatial location, take
    the squared L2 difference summed over channels, average spatially; then
    average the layers and the batch.  Symmetric by construction.
    """
    if x.shape != x_prime.shape:
        raise ValueError(f"image shapes differ: {tuple(x.shape)} vs {tuple(x_prime.shape)}")
    feats_a = feature_net.features(x)
    feats_b = feature_net.features(x_prime)
    eps = 1e-8
    layer_terms = []
    for fa, fb in zip(feats_a, feats_b):
        na = fa / torch.sqrt(fa.pow(2).sum(dim=1, keepdim=True) + eps)
        nb = fb / torch.sqrt(fb.pow(2).sum(dim=1, keepdim=True) + eps)
        layer_terms.append((na - nb).pow(2).sum(dim=1).mean(dim=(1, 2)))
    return torch.stack(layer_terms, dim=0).mean()


def reconstruction_loss(x, x_prime, bundle, feature_net=None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(pixel L1, perceptual distance, encoder-latent L1) between x and x'."""
    if isinstance(x, torch.Tensor):
        x_t, xp_t = x, x_prime
        if x_t.shape != xp_t.shape:
            raise ValueError(f"image shapes differ: {tuple(x_t.shape)} vs {tuple(xp_t.shape)}")
    else:
        x_t = bundle._images_to_tensor(x)
        xp_t = bundle._images_to_tensor(x_prime)
        if x_t.shape != xp_t.shape:
            raise ValueError("image shapes differ")
    if feature_net is None:
        feature_net = perceptual_net_for(x_t.shape[-1], device=x_t.device, dtype=x_t.dtype)
    rec_x = (xp_t - x_t).abs().mean()
    lpips = feature_distance(feature_net, x_t, xp_t)
    rec_w = (bundle.encoder(xp_t) - bundle.encoder(x_t)).abs().mean()
    return rec_x, lpips, rec_w


class PathLengthRegularizer:
    """StyleGAN2 path length penalty with an exponential running mean.

    Penalizes the squared deviation of grad_w (G(w, c) . noise) norms from
    the running mean of those norms; the mean starts at zero, so a constant
    generator scores exactly zero.
    """

    def __init__(self, decay: float = 0.01):
        if not 0 < decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        self.decay = decay
        self.running_mean = 0.0
        self.updates = 0

    def penalty(self, generator, w: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        if w.shape[0] < 1:
            raise ValueError("need a batch of at least 1")
        w = w.detach().requires_grad_(True)
        images, _ = generator(w, condition)
        noise = torch.randn_like(images) / math.sqrt(images.shape[2] * images.shape[3])
        output = (images * noise).sum()
        (grads,) = torch.autograd.grad(output, w, create_graph=True)
        if not torch.isfinite(grads).all():
            raise RuntimeError("non-finite path gradients")
        norms = grads.pow(2).sum(dim=1).sqrt()
        penalty = (norms - self.running_mean).pow(2).mean()
        self.running_mean += self.decay * (float(norms.mean().item()) - self.running_mean)
        self.updates += 1
        return penalty


def path_regularization(bundle, w_batch, condition_batch, state: PathLengthRegularizer) -> torch.Tensor:
    """Functional wrapper over PathLengthRegularizer for one-off evaluation."""
    w = w_batch if isinstance(w_batch, torch.Tensor) else torch.as_tensor(w_batch, dtype=torch.float32)
    c = (
        condition_batch
        if isinstance(condition_batch, torch.Tensor)
        else torch.as_tensor(condition_batch, dtype=torch.float32)
    )
    return state.penalty(bundle.generator, w, c)


def total_loss(terms: Mapping[str, object], weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the generator-side terms.

    ``terms`` must supply exactly adv_g, reg, rec_x, lpips, rec_w, cls.  With
    unit weights this is the plain four-part sum (reconstruction counted as
    its three parts).
    """
    missing = [k for k in GENERATOR_TERMS if k not in terms]
    extra = [k for k in terms if k not in GENERATOR_TERMS]
    if missing or extra:
        raise ValueError(f"terms must be exactly {GENERATOR_TERMS}; missing {missing}, extra {extra}")
    values = {k: _as_float_tensor(terms[k]) for k in GENERATOR_TERMS}
    total = (
        weights.w_adv * values["adv_g"]
        + weights.w_reg * values["reg"]
        + weights.w_rec_x * values["rec_x"]
        + weights.w_lpips * values["lpips"]
        + weights.w_rec_w * values["rec_w"]
        + weights.w_cls * values["cls"]
    )
    if not torch.isfinite(total).all():
        raise ValueError("total loss is not finite")
    return total
