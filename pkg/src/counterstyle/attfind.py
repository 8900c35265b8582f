"""Greedy discovery of style coordinates that drive a classifier's logit.

For a target class y and a pool of images the classifier does NOT currently
assign to y, every candidate coordinate is pushed alpha standard deviations
in each direction and the resulting change of the y logit is recorded.  The
coordinate/direction with the largest mean logit gain is selected, images it
already explains (gain above a threshold) leave the pool, and the search
repeats on the remainder.  Coordinates that raise the logit in BOTH
directions on average are treated as direction-inconsistent and skipped.

All deltas are measured in logit units against the replay of each image's
own captured styles, so a no-op edit scores exactly zero.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .core import (
    DIRECTIONS,
    StyleCoordinateId,
    StyleModel,
    StyleStats,
    StyleVectorSet,
    coordinate_at,
    coordinate_index,
    intervention_value,
)

FLAG_EMPTY_POOL = "empty image pool"
FLAG_NO_EFFECT = "no classifier-affecting coordinates found"
FLAG_EARLY_STOP = "stopped early: no remaining coordinate with positive mean delta"


@dataclass(frozen=True)
class Attribute:
    """One discovered coordinate: where to push, which way, and how much it moved."""

    coord: StyleCoordinateId
    direction: int
    mean_delta: float
    images_explained: int
    rank: int

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be +1 or -1, got {self.direction}")
        if self.rank < 0 or self.images_explained < 0:
            raise ValueError("rank and images_explained must be >= 0")

    def to_json_dict(self) -> dict:
        return {
            "layer": self.coord.layer_index,
            "channel": self.coord.channel_index,
            "direction": self.direction,
            "mean_delta": float(self.mean_delta),
            "images_explained": self.images_explained,
            "rank": self.rank,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Attribute":
        return cls(
            coord=StyleCoordinateId(int(d["layer"]), int(d["channel"])),
            direction=int(d["direction"]),
            mean_delta=float(d["mean_delta"]),
            images_explained=int(d["images_explained"]),
            rank=int(d["rank"]),
        )


@dataclass(frozen=True)
class AttributeSet:
    """Ranked attributes for one target class plus the knobs that produced them.

    ``stats_ref`` is the digest of the StyleStats used for interventions;
    downstream consumers check it so an attribute set is never replayed with
    mismatched statistics.  ``selector`` records which method picked the
    coordinates ("attfind" or "wu"); for "wu" sets mean_delta holds the
    selector's normalized value-difference score rather than a logit delta.
    """

    target_class: int
    attributes: tuple[Attribute, ...]
    max_attributes: int
    threshold: float
    alpha: float
    stats_ref: str
    layer_channels: tuple[int, ...]
    flags: tuple[str, ...] = ()
    selector: str = "attfind"

    def __post_init__(self):
        if self.target_class < 0:
            raise ValueError("target_class must be >= 0")
        if len(self.attributes) > self.max_attributes:
            raise ValueError(f"{len(self.attributes)} attributes exceed the cap {self.max_attributes}")
        coords = [a.coord for a in self.attributes]
        if len(set(coords)) != len(coords):
            raise ValueError("attribute coordinates must be distinct")
        for want, attr in enumerate(self.attributes):
            if attr.rank != want:
                raise ValueError(f"ranks must be 0..n-1 in order, got {attr.rank} at position {want}")
            if not attr.mean_delta > 0:
                raise ValueError(f"selected attribute must have mean_delta > 0, got {attr.mean_delta}")
            coordinate_index(attr.coord, self.layer_channels)  # bounds check
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "layer_channels", tuple(int(w) for w in self.layer_channels))
        object.__setattr__(self, "flags", tuple(self.flags))

    def __len__(self) -> int:
        return len(self.attributes)

    def to_json_dict(self) -> dict:
        return {
            "class": self.target_class,
            "t": float(self.threshold),
            "alpha": float(self.alpha),
            "attributes": [a.to_json_dict() for a in self.attributes],
            "max_attributes": self.max_attributes,
            "stats_ref": self.stats_ref,
            "layer_channels": list(self.layer_channels),
            "flags": list(self.flags),
            "selector": self.selector,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AttributeSet":
        return cls(
            target_class=int(d["class"]),
            attributes=tuple(Attribute.from_json_dict(a) for a in d["attributes"]),
            max_attributes=int(d["max_attributes"]),
            threshold=float(d["t"]),
            alpha=float(d["alpha"]),
            stats_ref=str(d["stats_ref"]),
            layer_channels=tuple(int(w) for w in d["layer_channels"]),
            flags=tuple(d.get("flags", ())),
            selector=str(d.get("selector", "attfind")),
        )


def save_attribute_set(attrs: AttributeSet, path: str, meta: Optional[dict] = None) -> None:
    payload = attrs.to_json_dict()
    if meta:
        payload["_meta"] = meta
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_attribute_set(path: str) -> AttributeSet:
    with open(path) as fh:
        return AttributeSet.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class DeltaTable:
    """Per-image logit deltas for every candidate (coordinate, direction).

    ``delta`` has shape (images, k, 2) with direction axis ordered (+1, -1);
    non-candidate coordinates hold NaN.  ``mean_delta`` is the per-column mean
    over THIS table's image rows.  Deltas are per-image quantities: removing
    an image never changes another image's row, so restricting a table to a
    subset of rows just re-aggregates the cached values.
    """

    delta: np.ndarray
    candidate: np.ndarray
    mean_delta: np.ndarray
    baseline: np.ndarray
    target_class: int
    layer_channels: tuple[int, ...]

    @property
    def num_images(self) -> int:
        return int(self.delta.shape[0])

    @property
    def k(self) -> int:
        return int(self.delta.shape[1])

    @property
    def is_empty(self) -> bool:
        return self.num_images == 0 or not bool(self.candidate.any())

    def restrict(self, image_mask: np.ndarray, candidate_mask: Optional[np.ndarray] = None) -> "DeltaTable":
        """New table over a subset of images and, optionally, of candidates."""
        image_mask = np.asarray(image_mask, dtype=bool)
        if image_mask.shape != (self.num_images,):
            raise ValueError(f"image mask must have shape ({self.num_images},)")
        cand = self.candidate if candidate_mask is None else np.asarray(candidate_mask, dtype=bool) & self.candidate
        delta = self.delta[image_mask].copy()
        delta[:, ~cand, :] = np.nan
        return DeltaTable(
            delta=delta,
            candidate=cand.copy(),
            mean_delta=_column_means(delta, cand),
            baseline=self.baseline[image_mask].copy(),
            target_class=self.target_class,
            layer_channels=self.layer_channels,
        )


def _column_means(delta: np.ndarray, candidate: np.ndarray) -> np.ndarray:
    """Mean over images for each (coordinate, direction) column.

    Each column is reduced as a contiguous 1-D array so the float result is
    bit-identical to np.mean over the same values collected one image at a
    time, independent of numpy's multi-axis reduction strategy.
    """
    n, k, _ = delta.shape
    means = np.full((k, 2), np.nan, dtype=np.float64)
    if n == 0:
        return means
    for idx in np.flatnonzero(candidate):
        for di in range(2):
            means[idx, di] = np.mean(np.ascontiguousarray(delta[:, idx, di]))
    return means


def _as_style_matrix(styles, k: int) -> np.ndarray:
    if isinstance(styles, StyleVectorSet):
        matrix = styles.flat[None]
    elif isinstance(styles, (list, tuple)) and styles and isinstance(styles[0], StyleVectorSet):
        matrix = np.stack([s.flat for s in styles])
    else:
        matrix = np.asarray(styles, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != k:
        raise ValueError(f"expected a (images, {k}) style matrix, got shape {matrix.shape}")
    return matrix


def _classify_styles(model: StyleModel, styles: np.ndarray, batch_size: int) -> np.ndarray:
    """Logits of the images generated from style rows, evaluated in chunks."""
    outputs = []
    for start in range(0, styles.shape[0], batch_size):
        chunk = styles[start : start + batch_size]
        logits = np.asarray(model.classify(model.generate_from_styles(chunk)), dtype=np.float64)
        outputs.append(logits)
    return np.concatenate(outputs, axis=0)


def compute_deltas(
    model: StyleModel,
    styles,
    target_class: int,
    stats: StyleStats,
    alpha: float = 3.0,
    excluded: Iterable[StyleCoordinateId] = (),
    batch_size: int = 128,
) -> DeltaTable:
    """Logit change of the target class under every single-coordinate push.

    The baseline for each image is the classifier's logit on the replay of
    its own styles, so delta is a pure function of (styles, coordinate,
    direction).  Zero-variance coordinates are dropped from the candidate
    set: their pushes replay the mean and cannot move anything usefully.
    """
    layer_channels = tuple(model.layer_channels)
    k = int(sum(layer_channels))
    matrix = _as_style_matrix(styles, k)
    if stats.k != k:
        raise ValueError(f"stats cover {stats.k} coordinates, model has {k}")
    if not 0 <= target_class < model.num_classes:
        raise ValueError(f"target class {target_class} out of range for {model.num_classes} classes")
    n = matrix.shape[0]

    candidate = np.ones(k, dtype=bool)
    for coord in excluded:
        candidate[coordinate_index(coord, layer_channels)] = False
    candidate &= np.asarray(stats.std) > 0.0

    if n:
        baseline_logits = _classify_styles(model, matrix, batch_size)
        predicted = np.argmax(baseline_logits, axis=1)
        offenders = np.flatnonzero(predicted == target_class)
        if offenders.size:
            raise ValueError(
                f"images {offenders.tolist()} are already classified as {target_class} "
                "on replay; the pool must contain only counter-examples"
            )
        baseline = baseline_logits[:, target_class]
    else:
        baseline = np.zeros(0)

    delta = np.full((n, k, 2), np.nan, dtype=np.float64)
    for idx in np.flatnonzero(candidate):
        for di, direction in enumerate(DIRECTIONS):
            value = intervention_value(stats, idx, direction, alpha)
            edited = matrix.copy()
            edited[:, idx] = value
            logits = _classify_styles(model, edited, batch_size)
            delta[:, idx, di] = logits[:, target_class] - baseline
    return DeltaTable(
        delta=delta,
        candidate=candidate,
        mean_delta=_column_means(delta, candidate),
        baseline=baseline,
        target_class=target_class,
        layer_channels=layer_channels,
    )


def discard_inconsistent(table: DeltaTable) -> DeltaTable:
    """Zero the mean delta of coordinates that gain in both directions.

    A coordinate whose average effect on the target logit is positive both
    ways is not reporting a directional attribute; zeroing both columns makes
    it unselectable without touching the per-image deltas.
    """
    means = table.mean_delta.copy()
    both_up = (means[:, 0] > 0) & (means[:, 1] > 0)
    means[both_up, :] = 0.0
    return DeltaTable(
        delta=table.delta,
        candidate=table.candidate,
        mean_delta=means,
        baseline=table.baseline,
        target_class=table.target_class,
        layer_channels=table.layer_channels,
    )


def att_find(
    model: StyleModel,
    images: np.ndarray,
    target_class: int,
    max_attributes: int,
    threshold: float,
    stats: StyleStats,
    alpha: float = 3.0,
    excluded: Iterable[StyleCoordinateId] = (),
    batch_size: int = 128,
) -> AttributeSet:
    """Greedy coordinate discovery over a pool of counter-class images.

    The pool must be counter-class in reconstruction space: every image's
    replayed styles classify as some other class, which is also where the
    per-coordinate deltas are measured.  Repeats until ``max_attributes``
    are found, the pool empties, or no
    remaining coordinate still has a positive mean delta (early stop).  Each
    round recomputes mean deltas over the surviving pool, skips coordinates
    that became direction-inconsistent there, picks the best (ties resolve to
    the lowest coordinate with +1 before -1), and retires the images whose
    own delta exceeds the threshold.
    """
    if max_attributes < 1:
        raise ValueError(f"max_attributes must be >= 1, got {max_attributes}")
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    if target_class < 0 or target_class >= model.num_classes:
        raise ValueError(f"target class {target_class} out of range for {model.num_classes} classes")
    layer_channels = tuple(model.layer_channels)

    images = np.asarray(images)
    if images.shape[0] == 0:
        warnings.warn("att_find called with an empty image pool", stacklevel=2)
        return AttributeSet(
            target_class=target_class,
            attributes=(),
            max_attributes=max_attributes,
            threshold=threshold,
            alpha=alpha,
            stats_ref=stats.digest(),
            layer_channels=layer_channels,
            flags=(FLAG_EMPTY_POOL,),
        )

    matrix = np.asarray(model.capture_styles(images), dtype=np.float64)
    table = compute_deltas(
        model, matrix, target_class, stats, alpha=alpha, excluded=excluded, batch_size=batch_size
    )

    alive = np.ones(table.num_images, dtype=bool)
    remaining = table.candidate.copy()
    selected: list[Attribute] = []
    flags: list[str] = []
    while len(selected) < max_attributes and alive.any():
        current = discard_inconsistent(table.restrict(alive, remaining))
        means = np.where(np.isnan(current.mean_delta), -np.inf, current.mean_delta)
        flat_best = int(np.argmax(means))  # first max: lowest coordinate, +1 first
        coord_idx, di = divmod(flat_best, 2)
        best = means[coord_idx, di]
        if not best > 0:
            flags.append(FLAG_NO_EFFECT if not selected else FLAG_EARLY_STOP)
            break
        direction = DIRECTIONS[di]
        explained = alive & (table.delta[:, coord_idx, di] > threshold)
        selected.append(
            Attribute(
                coord=coordinate_at(coord_idx, layer_channels),
                direction=direction,
                mean_delta=float(best),
                images_explained=int(explained.sum()),
                rank=len(selected),
            )
        )
        alive = alive & ~explained
        remaining[coord_idx] = False

    return AttributeSet(
        target_class=target_class,
        attributes=tuple(selected),
        max_attributes=max_attributes,
        threshold=threshold,
        alpha=alpha,
        stats_ref=stats.digest(),
        layer_channels=layer_channels,
        flags=tuple(flags),
    )
