"""Style-space addressing, statistics, and the single-coordinate intervention.

A style vector set is the per-layer collection of style scalars that the
generator's affine heads produce for one image.  Flattened in layer order it
is a single vector of length K; every discovery and explanation routine in
this package addresses that vector through ``StyleCoordinateId`` and edits it
through ``intervene``.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

# Canonical direction order: +1 before -1.  Ties between otherwise equal
# candidates resolve in this order everywhere.
DIRECTIONS: tuple[int, int] = (1, -1)

Direction = int


class ZeroVarianceWarning(UserWarning):
    """An intervention targeted a coordinate whose population std is zero."""


def canonical_json(obj) -> str:
    """Serialize to JSON with sorted keys and no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest_of(obj) -> str:
    """Short stable digest of a JSON-serializable object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, order=True)
class StyleCoordinateId:
    """Address of one style scalar: (layer, channel within that layer)."""

    layer_index: int
    channel_index: int

    def __post_init__(self):
        if self.layer_index < 0 or self.channel_index < 0:
            raise ValueError(f"coordinate indices must be >= 0, got {self}")

    def as_tuple(self) -> tuple[int, int]:
        return (self.layer_index, self.channel_index)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class StyleVectorSet:
    """Per-layer style vectors for a single image.

    Treated as an immutable value: arrays are copied on construction and
    marked read-only, and every edit returns a new instance.
    """

    per_layer_values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.per_layer_values) == 0:
            raise ValueError("style vector set needs at least one layer")
        frozen = []
        for i, vec in enumerate(self.per_layer_values):
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"layer {i} must be a non-empty 1-D vector, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"layer {i} contains non-finite style values")
            frozen.append(_readonly(arr))
        object.__setattr__(self, "per_layer_values", tuple(frozen))

    @classmethod
    def from_flat(cls, flat, layer_channels: Sequence[int]) -> "StyleVectorSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1:
            raise ValueError(f"expected a flat 1-D vector, got shape {flat.shape}")
        total = int(sum(layer_channels))
        if flat.size != total:
            raise ValueError(f"flat vector has {flat.size} entries, layer map needs {total}")
        parts, start = [], 0
        for width in layer_channels:
            parts.append(flat[start : start + width])
            start += width
        return cls(tuple(parts))

    @property
    def layer_channels(self) -> tuple[int, ...]:
        return tuple(v.size for v in self.per_layer_values)

    @property
    def k(self) -> int:
        return int(sum(v.size for v in self.per_layer_values))

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(self.per_layer_values)

    def value_at(self, coord: StyleCoordinateId) -> float:
        self._check_coord(coord)
        return float(self.per_layer_values[coord.layer_index][coord.channel_index])

    def with_value(self, coord: StyleCoordinateId, value: float) -> "StyleVectorSet":
        self._check_coord(coord)
        layers = [np.array(v) for v in self.per_layer_values]
        layers[coord.layer_index][coord.channel_index] = value
        return StyleVectorSet(tuple(layers))

    def _check_coord(self, coord: StyleCoordinateId) -> None:
        if coord.layer_index >= len(self.per_layer_values):
            raise ValueError(f"layer {coord.layer_index} out of range for {len(self.per_layer_values)} layers")
        if coord.channel_index >= self.per_layer_values[coord.layer_index].size:
            raise ValueError(
                f"channel {coord.channel_index} out of range for layer {coord.layer_index} "
                f"of width {self.per_layer_values[coord.layer_index].size}"
            )


def enumerate_coordinates(layer_channels: Sequence[int]) -> list[StyleCoordinateId]:
    """All coordinates in flat (layer-major, then channel) order."""
    if len(layer_channels) == 0:
        raise ValueError("layer map is empty")
    if any(int(w) < 1 for w in layer_channels):
        raise ValueError(f"every layer needs at least one channel, got {tuple(layer_channels)}")
    return [
        StyleCoordinateId(li, ci)
        for li, width in enumerate(layer_channels)
        for ci in range(int(width))
    ]


def coordinate_index(coord: StyleCoordinateId, layer_channels: Sequence[int]) -> int:
    """Flat index of a coordinate under the layer map."""
    if coord.layer_index >= len(layer_channels):
        raise ValueError(f"layer {coord.layer_index} out of range")
    if coord.channel_index >= int(layer_channels[coord.layer_index]):
        raise ValueError(f"channel {coord.channel_index} out of range in layer {coord.layer_index}")
    return int(sum(int(w) for w in layer_channels[: coord.layer_index]) + coord.channel_index)

def coordinate_at(index: int, layer_channels: Sequence[int]) -> StyleCoordinateId:
    """Inverse of :func:`coordinate_index`."""
    if index < 0:
        raise ValueError("flat index must be >= 0")
    remaining = int(index)
    for li, width in enumerate(layer_channels):
        if remaining < int(width):
            return StyleCoordinateId(li, remaining)
        remaining -= int(width)
    raise ValueError(f"flat index {index} out of range for layer map {tuple(layer_channels)}")


@dataclass(frozen=True)
class StyleStats:
    """Per-coordinate population mean and std over a sample of style vectors."""

    mean: np.ndarray
    std: np.ndarray
    sample_count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise ValueError(f"mean/std must be matching 1-D vectors, got {mean.shape} and {std.shape}")
        if mean.size == 0:
            raise ValueError("stats over zero coordinates")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise ValueError("stats contain non-finite values")
        if np.any(std < 0):
            raise ValueError("std must be >= 0")
        if self.sample_count < 2:
            raise ValueError("stats need at least 2 samples")
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "std", _readonly(std))

    @property
    def k(self) -> int:
        return int(self.mean.size)

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "sample_count": int(self.sample_count),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "StyleStats":
        stats = cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            sample_count=int(d["sample_count"]),
        )
        if stats.k != int(d["k"]):
            raise ValueError(f"stats record claims k={d['k']} but holds {stats.k} coordinates")
        return stats

    def digest(self) -> str:
        return digest_of(self.to_json_dict())


def compute_style_stats(samples) -> StyleStats:
    """Population mean/std per flat coordinate over >= 2 style vector sets.

    Accepts either an iterable of StyleVectorSet (all with the same layer map)
    or a 2-D array of already-flattened vectors, one row per sample.
    """
    if isinstance(samples, np.ndarray):
        matrix = np.asarray(samples, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError(f"expected a (samples, k) matrix, got shape {matrix.shape}")
    else:
        sets = list(samples)
        if len(sets) == 0:
            raise ValueError("no style samples given")
        layer_map = sets[0].layer_channels
        for s in sets[1:]:
            if s.layer_channels != layer_map:
                raise ValueError(f"layer map mismatch: {s.layer_channels} vs {layer_map}")
        matrix = np.stack([s.flat for s in sets])
    if matrix.shape[0] < 2:
        raise ValueError(f"stats need at least 2 samples, got {matrix.shape[0]}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("style samples contain non-finite values")
    return StyleStats(
        mean=matrix.mean(axis=0),
        std=matrix.std(axis=0),
        sample_count=int(matrix.shape[0]),
    )


def intervention_value(stats: StyleStats, flat_index: int, direction: Direction, alpha: float) -> float:
    """Target value mean + direction * alpha * std for one flat coordinate.

    Zero-variance coordinates collapse to the mean regardless of direction.
    Both the production path and any independent re-derivation must use this
    exact expression so the resulting floats agree bit for bit.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if not 0 <= flat_index < stats.k:
        raise ValueError(f"flat index {flat_index} out of range for k={stats.k}")
    return float(stats.mean[flat_index] + direction * alpha * stats.std[flat_index])


def intervene(
    styles: StyleVectorSet,
    coord: StyleCoordinateId,
    direction: Direction,
    stats: StyleStats,
    alpha: float = 3.0,
) -> StyleVectorSet:
    """Set one coordinate to mean + direction * alpha * std; all others untouched.

    Pure: returns a new StyleVectorSet, the input is never mutated.  A
    zero-variance coordinate is set to its mean (the direction cannot matter)
    and a ZeroVarianceWarning is emitted.
    """
    styles._check_coord(coord)
    if stats.k != styles.k:
        raise ValueError(f"stats cover {stats.k} coordinates, styles have {styles.k}")
    idx = coordinate_index(coord, styles.layer_channels)
    if stats.std[idx] == 0.0:
        warnings.warn(
            f"coordinate {coord.as_tuple()} has zero variance; intervention pins it to the mean",
            ZeroVarianceWarning,
            stacklevel=2,
        )
    value = intervention_value(stats, idx, direction, alpha)
    return styles.with_value(coord, value)


@runtime_checkable
class StyleModel(Protocol):
    """What discovery, explanation, and evaluation need from a model.

    Implemented by the trained network bundle and, with closed-form maps, by
    the oracle worlds, so everything downstream of training can be exercised
    and verified without any network in the loop.

    ``classify`` returns logits.  ``capture_styles`` maps a batch of images to
    flat style rows; ``generate_from_styles`` maps flat style rows back to
    images.  ``classifier_digest`` identifies the frozen classifier so that
    comparisons across bundles can insist on sharing one.
    """

    @property
    def layer_channels(self) -> tuple[int, ...]: ...

    @property
    def num_classes(self) -> int: ...

    def classify(self, images: np.ndarray) -> np.ndarray: ...

    def capture_styles(self, images: np.ndarray) -> np.ndarray: ...

    def generate_from_styles(self, styles: np.ndarray) -> np.ndarray: ...

    def classifier_digest(self) -> str: ...
