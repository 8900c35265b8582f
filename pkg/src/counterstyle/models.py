"""The four networks: style generator G, encoder E, discriminator D, frozen classifier C.

G maps a latent w plus a class-probability condition through per-layer affine
heads into style vectors, which modulate the convolutions of a small
StyleGAN2-like synthesis stack.  E inverts images to w.  C is trained
separately, then frozen; its softmax output is both the conditioning signal
and the judge that discovery answers to.  Everything downstream talks to a
``ModelBundle`` through numpy arrays only.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import StyleVectorSet, digest_of

DEVICE_ENV_VAR = "COUNTERSTYLE_DEVICE"


def default_device() -> str:
    return os.environ.get(DEVICE_ENV_VAR, "cpu")


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape contract shared by all four networks.

    ``layer_channels[i]`` is the style width of layer i, which is also the
    input-channel count of that layer's modulated convolution.  The synthesis
    stack starts at 4x4 and doubles per layer, so the layer count must equal
    log2(resolution / 4) + 1.
    """

    image_resolution: int = 32
    layer_channels: tuple[int, ...] = (128, 128, 64, 64)
    latent_dim: int = 128
    num_classes: int = 2

    def __post_init__(self):
        res = self.image_resolution
        if res < 4 or res & (res - 1) != 0:
            raise ValueError(f"resolution must be a power of two >= 4, got {res}")
        object.__setattr__(self, "layer_channels", tuple(int(c) for c in self.layer_channels))
        want_layers = int(math.log2(res // 4)) + 1
        if len(self.layer_channels) != want_layers:
            raise ValueError(
                f"resolution {res} needs {want_layers} style layers (4x4 doubling to {res}), "
                f"got {len(self.layer_channels)}"
            )
        if any(c < 1 for c in self.layer_channels):
            raise ValueError("every layer needs at least one channel")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def k(self) -> int:
        return int(sum(self.layer_channels))

    def to_json_dict(self) -> dict:
        return {
            "image_resolution": self.image_resolution,
            "layer_channels": list(self.layer_channels),
            "latent_dim": self.latent_dim,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            image_resolution=int(d["image_resolution"]),
            layer_channels=tuple(int(c) for c in d["layer_channels"]),
            latent_dim=int(d["latent_dim"]),
            num_classes=int(d["num_classes"]),
        )


@dataclass(frozen=True)
class ConditionVector:
    """Class probabilities used as the generator's conditioning input."""

    class_probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.class_probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ValueError(f"condition must be a vector of >= 2 probabilities, got shape {p.shape}")
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-5:
            raise ValueError(f"condition must be a probability vector, got {p} (sum {p.sum()})")
        object.__setattr__(self, "class_probabilities", p)


class ModulatedConv2d(nn.Module):
    """3x3 convolution whose weights are scaled per-sample by a style vector.

    The style multiplies the input-channel axis of the weight; demodulation
    rescales each output filter to unit norm.  Implemented as one grouped
    convolution over the flattened batch.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.weight = nn.Parameter(
            torch.randn(out_channels, in_channels, kernel, kernel) / math.sqrt(in_channels * kernel * kernel)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels))

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        weight = self.weight[None] * style[:, None, :, None, None]
        sigma = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + 1e-8)
        weight = weight * sigma[:, :, None, None, None]
        x = x.reshape(1, b * self.in_channels, h, w)
        weight = weight.reshape(b * self.out_channels, self.in_channels, self.kernel, self.kernel)
        out = F.conv2d(x, weight, padding=self.kernel // 2, groups=b)
        out = out.reshape(b, self.out_channels, h, w)
        return out + self.bias[None, :, None, None]


class Synthesis(nn.Module):
    """Constant 4x4 input, one modulated conv per style layer, doubling resolution."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        chans = spec.layer_channels
        self.const = nn.Parameter(torch.randn(chans[0], 4, 4))
        convs = []
        for i, in_ch in enumerate(chans):
            out_ch = chans[i + 1] if i + 1 < len(chans) else chans[-1]
            convs.append(ModulatedConv2d(in_ch, out_ch))
        self.convs = nn.ModuleList(convs)
        self.to_rgb = nn.Conv2d(chans[-1], 3, kernel_size=1)

    def forward(self, styles: Sequence[torch.Tensor]) -> torch.Tensor:
        b = styles[0].shape[0]
        x = self.const[None].expand(b, -1, -1, -1)
        for i, conv in enumerate(self.convs):
            if i > 0:
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = F.leaky_relu(conv(x, styles[i]), 0.2)
        return torch.tanh(self.to_rgb(x))


class Generator(nn.Module):
    """Affine style heads over (w ⊕ condition) feeding the synthesis stack."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        in_dim = spec.latent_dim + spec.num_classes
        self.affines = nn.ModuleList([nn.Linear(in_dim, ch) for ch in spec.layer_channels])
        for affine in self.affines:
            nn.init.ones_(affine.bias)  # styles start near 1: modulation begins as identity
        self.synthesis = Synthesis(spec)

    def styles(self, w: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        z = torch.cat([w, condition], dim=1)
        return torch.cat([affine(z) for affine in self.affines], dim=1)

    def split_styles(self, flat: torch.Tensor) -> list[torch.Tensor]:
        return list(torch.split(flat, list(self.spec.layer_channels), dim=1))

    def synthesize(self, flat_styles: torch.Tensor) -> torch.Tensor:
        return self.synthesis(self.split_styles(flat_styles))

    def forward(self, w: torch.Tensor, condition: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        flat = self.styles(w, condition)
        return self.synthesize(flat), flat


def _downsample_stages(resolution: int) -> int:
    # stride-2 stages from `resolution` down to 4x4
    return max(0, int(math.log2(resolution // 4)))


class Encoder(nn.Module):
    """Conv stack from image to latent w."""

    def __init__(self, spec: GeneratorSpec, base_channels: int = 32, max_channels: int = 128):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(3, base_channels, 3, padding=1), nn.LeakyReLU(0.2)]
        ch = base_channels
        for _ in range(_downsample_stages(spec.image_resolution)):
            nxt = min(ch * 2, max_channels)
            layers += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            ch = nxt
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(ch * 16, spec.latent_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.body(x)
        return self.head(h.flatten(1))


class Discriminator(nn.Module):
    """Conv stack from image to one realness logit."""

    def __init__(self, spec: GeneratorSpec, base_channels: int = 32, max_channels: int = 128):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(3, base_channels, 3, padding=1), nn.LeakyReLU(0.2)]
        ch = base_channels
        for _ in range(_downsample_stages(spec.image_resolution)):
            nxt = min(ch * 2, max_channels)
            layers += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            ch = nxt
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(ch * 16, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.body(x)
        return self.head(h.flatten(1)).squeeze(1)


class ConvClassifier(nn.Module):
    """Small conv classifier; its stage outputs double as perceptual features."""

    def __init__(self, resolution: int, num_classes: int, base_channels: int = 32, max_channels: int = 128):
        super().__init__()
        self.resolution = resolution
        self.num_classes = num_classes
        self.base_channels = base_channels
        self.max_channels = max_channels
        stages = []
        stages.append(nn.Sequential(nn.Conv2d(3, base_channels, 3, padding=1), nn.ReLU()))
        ch = base_channels
        for _ in range(_downsample_stages(resolution)):
            nxt = min(ch * 2, max_channels)
            stages.append(nn.Sequential(nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.ReLU()))
            ch = nxt
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(ch, num_classes)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)[-1]
        return self.head(h.mean(dim=(2, 3)))


def parameter_hash(module: nn.Module) -> str:
    """Stable digest of all parameters and buffers, in state-dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode("utf-8"))
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


@dataclass
class ModelBundle:
    """The four networks plus their shape contract.

    The classifier is frozen at construction: gradients are disabled and the
    bundle records its parameter hash so any later drift is detectable.  All
    public methods take and return numpy arrays; styles are float64 at the
    boundary.  ``cst_enabled=False`` marks a bundle trained without
    classifier conditioning: its condition input is a constant zero vector.
    """

    spec: GeneratorSpec
    generator: Generator
    encoder: Encoder
    discriminator: Discriminator
    classifier: ConvClassifier
    cst_enabled: bool = True
    training_step: int = 0
    device: str = "cpu"
    classifier_hash: str = field(default="", repr=False)

    @classmethod
    def create(
        cls,
        spec: GeneratorSpec,
        classifier: ConvClassifier,
        seed: int,
        cst_enabled: bool = True,
        device: Optional[str] = None,
    ) -> "ModelBundle":
        if classifier.num_classes != spec.num_classes:
            raise ValueError(
                f"classifier has {classifier.num_classes} classes, spec declares {spec.num_classes}"
            )
        if classifier.resolution != spec.image_resolution:
            raise ValueError(
                f"classifier resolution {classifier.resolution} != spec resolution {spec.image_resolution}"
            )
        device = device or default_device()
        torch.manual_seed(seed)
        generator = Generator(spec).to(device)
        encoder = Encoder(spec).to(device)
        discriminator = Discriminator(spec).to(device)
        classifier = classifier.to(device)
        classifier.eval()
        classifier.requires_grad_(False)
        return cls(
            spec=spec,
            generator=generator,
            encoder=encoder,
            discriminator=discriminator,
            classifier=classifier,
            cst_enabled=cst_enabled,
            device=device,
            classifier_hash=parameter_hash(classifier),
        )

    # -- numpy boundary helpers ----------------------------------------------

    def _images_to_tensor(self, images: np.ndarray) -> torch.Tensor:
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        res = self.spec.image_resolution
        if arr.ndim != 4 or arr.shape[1:] != (3, res, res):
            raise ValueError(f"expected images shaped (batch, 3, {res}, {res}), got {arr.shape}")
        if np.abs(arr).max(initial=0.0) > 1.0 + 1e-3:
            raise ValueError("pixel values must lie in [-1, 1]")
        return torch.from_numpy(arr).to(self.device)

    def _styles_to_tensor(self, styles) -> torch.Tensor:
        if isinstance(styles, StyleVectorSet):
            if styles.layer_channels != self.spec.layer_channels:
                raise ValueError(
                    f"style layer map {styles.layer_channels} != spec {self.spec.layer_channels}"
                )
            arr = styles.flat[None]
        else:
            arr = np.asarray(styles, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[None]
        if arr.ndim != 2 or arr.shape[1] != self.spec.k:
            raise ValueError(f"expected (batch, {self.spec.k}) styles, got shape {arr.shape}")
        return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).to(self.device)

    def _condition_to_tensor(self, condition, batch: int) -> torch.Tensor:
        if isinstance(condition, ConditionVector):
            arr = condition.class_probabilities[None]
        else:
            arr = np.asarray(condition, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[None]
        if arr.shape[1] != self.spec.num_classes:
            raise ValueError(f"condition has {arr.shape[1]} entries, need {self.spec.num_classes}")
        if np.any(arr < -1e-8) or np.max(np.abs(arr.sum(axis=1) - 1.0)) > 1e-5:
            raise ValueError("condition rows must be probability vectors")
        if arr.shape[0] == 1 and batch > 1:
            arr = np.repeat(arr, batch, axis=0)
        if arr.shape[0] != batch:
            raise ValueError(f"{arr.shape[0]} condition rows for batch of {batch}")
        return torch.from_numpy(arr.astype(np.float32)).to(self.device)

    # -- model surface ---------------------------------------------------------

    @property
    def layer_channels(self) -> tuple[int, ...]:
        return self.spec.layer_channels

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def classify(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            logits = self.classifier(self._images_to_tensor(images))
        return logits.cpu().numpy().astype(np.float64)

    def encode(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            w = self.encoder(self._images_to_tensor(images))
        return w.cpu().numpy().astype(np.float64)

    def condition_for(self, images: np.ndarray) -> np.ndarray:
        """softmax(C(x)) rows, or constant zeros when conditioning is disabled."""
        n = 1 if np.asarray(images).ndim == 3 else np.asarray(images).shape[0]
        if not self.cst_enabled:
            return np.zeros((n, self.spec.num_classes), dtype=np.float64)
        with torch.no_grad():
            logits = self.classifier(self._images_to_tensor(images))
            probs = torch.softmax(logits, dim=1)
        return probs.cpu().numpy().astype(np.float64)

    def generate(self, w: np.ndarray, condition) -> tuple[np.ndarray, np.ndarray]:
        """Synthesize from latents; returns (images, flat styles actually used)."""
        w_arr = np.asarray(w, dtype=np.float64)
        if w_arr.ndim == 1:
            w_arr = w_arr[None]
        if w_arr.ndim != 2 or w_arr.shape[1] != self.spec.latent_dim:
            raise ValueError(f"expected (batch, {self.spec.latent_dim}) latents, got {w_arr.shape}")
        if not np.all(np.isfinite(w_arr)):
            raise ValueError("latents contain non-finite values")
        w_t = torch.from_numpy(w_arr.astype(np.float32)).to(self.device)
        c_t = self._condition_to_tensor(condition, w_t.shape[0])
        with torch.no_grad():
            images, styles = self.generator(w_t, c_t)
        return (
            images.cpu().numpy().astype(np.float32),
            styles.cpu().numpy().astype(np.float64),
        )

    def generate_from_styles(self, styles) -> np.ndarray:
        """Synthesize directly from flat style rows, bypassing the affine heads."""
        with torch.no_grad():
            images = self.generator.synthesize(self._styles_to_tensor(styles))
        return images.cpu().numpy().astype(np.float32)

    def capture_styles(self, images: np.ndarray) -> np.ndarray:
        """Style rows an image induces: affine(E(x) ⊕ condition_for(x))."""
        x = self._images_to_tensor(images)
        with torch.no_grad():
            w = self.encoder(x)
            if self.cst_enabled:
                cond = torch.softmax(self.classifier(x), dim=1)
            else:
                cond = torch.zeros(x.shape[0], self.spec.num_classes, device=x.device)
            styles = self.generator.styles(w, cond)
        return styles.cpu().numpy().astype(np.float64)

    def discriminate(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            score = self.discriminator(self._images_to_tensor(images))
        return score.cpu().numpy().astype(np.float64)

    def classifier_digest(self) -> str:
        return parameter_hash(self.classifier)

    def verify_classifier_frozen(self) -> bool:
        return self.classifier_digest() == self.classifier_hash


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

BUNDLE_FORMAT_VERSION = 1
CLASSIFIER_FORMAT_VERSION = 1


def _atomic_torch_save(payload: dict, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_json_save(payload: dict, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest_path_for(blob_path: str) -> str:
    return blob_path + ".manifest.json"


def save_bundle(bundle: ModelBundle, blob_path: str, manifest_extra: Optional[dict] = None) -> None:
    """Write the bundle blob and its adjacent JSON manifest atomically."""
    payload = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "spec": bundle.spec.to_json_dict(),
        "cst_enabled": bundle.cst_enabled,
        "training_step": bundle.training_step,
        "generator": bundle.generator.state_dict(),
        "encoder": bundle.encoder.state_dict(),
        "discriminator": bundle.discriminator.state_dict(),
        "classifier": bundle.classifier.state_dict(),
        "classifier_arch": {
            "base_channels": bundle.classifier.base_channels,
            "max_channels": bundle.classifier.max_channels,
        },
        "classifier_hash": bundle.classifier_hash,
    }
    _atomic_torch_save(payload, blob_path)
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "spec": bundle.spec.to_json_dict(),
        "training_step": bundle.training_step,
        "cst_enabled": bundle.cst_enabled,
        "classifier_hash": bundle.classifier_hash,
        "spec_digest": digest_of(bundle.spec.to_json_dict()),
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    _atomic_json_save(manifest, manifest_path_for(blob_path))


def load_bundle(blob_path: str, device: Optional[str] = None) -> tuple[ModelBundle, Optional[dict]]:
    device = device or default_device()
    payload = torch.load(blob_path, map_location=device, weights_only=True)
    if payload.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise ValueError(f"unsupported bundle format {payload.get('format_version')}")
    spec = GeneratorSpec.from_json_dict(payload["spec"])
    arch = payload.get("classifier_arch", {"base_channels": 32, "max_channels": 128})
    classifier = ConvClassifier(
        spec.image_resolution,
        spec.num_classes,
        base_channels=int(arch["base_channels"]),
        max_channels=int(arch["max_channels"]),
    )
    classifier.load_state_dict(payload["classifier"])
    bundle = ModelBundle.create(
        spec, classifier, seed=0, cst_enabled=bool(payload["cst_enabled"]), device=device
    )
    bundle.generator.load_state_dict(payload["generator"])
    bundle.encoder.load_state_dict(payload["encoder"])
    bundle.discriminator.load_state_dict(payload["discriminator"])
    bundle.training_step = int(payload["training_step"])
    if bundle.classifier_digest() != payload["classifier_hash"]:
        raise ValueError("classifier parameters in blob do not match the recorded hash")
    bundle.classifier_hash = payload["classifier_hash"]
    manifest = None
    mp = manifest_path_for(blob_path)
    if os.path.exists(mp):
        with open(mp) as fh:
            manifest = json.load(fh)
    return bundle, manifest


def save_classifier(classifier: ConvClassifier, path: str, meta: Optional[dict] = None) -> None:
    payload = {
        "format_version": CLASSIFIER_FORMAT_VERSION,
        "resolution": classifier.resolution,
        "num_classes": classifier.num_classes,
        "base_channels": classifier.base_channels,
        "max_channels": classifier.max_channels,
        "state": classifier.state_dict(),
        "meta": meta or {},
    }
    _atomic_torch_save(payload, path)
    manifest = {
        "format_version": CLASSIFIER_FORMAT_VERSION,
        "resolution": classifier.resolution,
        "num_classes": classifier.num_classes,
        "parameter_hash": parameter_hash(classifier),
    }
    manifest.update(meta or {})
    _atomic_json_save(manifest, manifest_path_for(path))


def load_classifier(path: str, device: Optional[str] = None) -> tuple[ConvClassifier, dict]:
    device = device or default_device()
    payload = torch.load(path, map_location=device, weights_only=True)
    if payload.get("format_version") != CLASSIFIER_FORMAT_VERSION:
        raise ValueError(f"unsupported classifier format {payload.get('format_version')}")
    classifier = ConvClassifier(
        int(payload["resolution"]),
        int(payload["num_classes"]),
        base_channels=int(payload.get("base_channels", 32)),
        max_channels=int(payload.get("max_channels", 128)),
    )
    classifier.load_state_dict(payload["state"])
    classifier = classifier.to(device)
    classifier.eval()
    return classifier, dict(payload.get("meta", {}))
