"""Per-image counterfactuals assembled from discovered attributes.

Two selection strategies: ``independent_topk`` scores each attribute alone on
the image and ranks, ``subset_greedy`` accumulates edits one at a time by
best marginal gain until the classifier's argmax reaches the target class or
the budget runs out.  The "original" side of every rendered pair is the
replay of the image's own captured styles, so original and counterfactual
differ only through the interventions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attfind import Attribute, AttributeSet
from .core import StyleModel, StyleStats, coordinate_index, intervention_value


def _require_matching_stats(attr_set: AttributeSet, stats: StyleStats) -> None:
    if attr_set.stats_ref != stats.digest():
        raise ValueError(
            f"attribute set was built with stats {attr_set.stats_ref}, got {stats.digest()}; "
            "interventions would use the wrong scale"
        )


def _single_image_styles(model: StyleModel, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    batch = image[None] if image.ndim == 3 else image
    if batch.shape[0] != 1:
        raise ValueError(f"expected a single image, got batch of {batch.shape[0]}")
    return np.asarray(model.capture_styles(batch), dtype=np.float64)[0]


def apply_attributes(
    styles_row: np.ndarray,
    attributes: Sequence[Attribute],
    stats: StyleStats,
    layer_channels: Sequence[int],
    alpha: float,
) -> np.ndarray:
    """Return a copy of one flat style row with every attribute's edit applied."""
    coords = [a.coord for a in attributes]
    if len(set(coords)) != len(coords):
        raise ValueError("attributes target duplicate coordinates")
    edited = np.array(styles_row, dtype=np.float64, copy=True)
    for attr in attributes:
        idx = coordinate_index(attr.coord, layer_channels)
        edited[idx] = intervention_value(stats, idx, attr.direction, alpha)
    return edited


@dataclass(frozen=True)
class CounterfactualResult:
    """A rendered before/after pair with the edits and classifier outputs."""

    target_class: int
    applied: tuple[Attribute, ...]
    original: np.ndarray
    modified: np.ndarray
    logits_before: np.ndarray
    logits_after: np.ndarray
    flipped: bool

    def __post_init__(self):
        coords = [a.coord for a in self.applied]
        if len(set(coords)) != len(coords):
            raise ValueError("applied attributes target duplicate coordinates")
        before = int(np.argmax(self.logits_before))
        after = int(np.argmax(self.logits_after))
        want = after == self.target_class and before != self.target_class
        if self.flipped != want:
            raise ValueError(f"flipped flag {self.flipped} contradicts logits (before={before}, after={after})")

    def prob_before(self) -> float:
        return float(_softmax(self.logits_before)[self.target_class])

    def prob_after(self) -> float:
        return float(_softmax(self.logits_after)[self.target_class])

    def to_json_dict(self) -> dict:
        return {
            "class": self.target_class,
            "flipped": bool(self.flipped),
            "applied": [a.to_json_dict() for a in self.applied],
            "logits_before": [float(v) for v in self.logits_before],
            "logits_after": [float(v) for v in self.logits_after],
            "prob_before": self.prob_before(),
            "prob_after": self.prob_after(),
        }


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def render_counterfactual(
    model: StyleModel,
    image: np.ndarray,
    attr_set: AttributeSet,
    stats: StyleStats,
    subset: Optional[Sequence[Attribute]] = None,
) -> CounterfactualResult:
    """Apply a subset of an attribute set (default: all of it) to one image."""
    _require_matching_stats(attr_set, stats)
    chosen = tuple(attr_set.attributes if subset is None else subset)
    row = _single_image_styles(model, image)
    edited = apply_attributes(row, chosen, stats, attr_set.layer_channels, attr_set.alpha)
    original = np.asarray(model.generate_from_styles(row[None]))[0]
    modified = np.asarray(model.generate_from_styles(edited[None]))[0]
    logits_before = np.asarray(model.classify(original[None]), dtype=np.float64)[0]
    logits_after = np.asarray(model.classify(modified[None]), dtype=np.float64)[0]
    y = attr_set.target_class
    flipped = int(np.argmax(logits_after)) == y and int(np.argmax(logits_before)) != y
    return CounterfactualResult(
        target_class=y,
        applied=chosen,
        original=original,
        modified=modified,
        logits_before=logits_before,
        logits_after=logits_after,
        flipped=flipped,
    )


def independent_topk(
    model: StyleModel,
    image: np.ndarray,
    attr_set: AttributeSet,
    k: int,
    stats: StyleStats,
) -> list[tuple[Attribute, float]]:
    """Rank attributes by their solo logit gain on this image; return the top k.

    Each attribute is applied alone to the image's captured styles and scored
    by the change of the target-class logit against the plain replay.  Ties
    preserve the attribute-set order.
    """
    if not attr_set.attributes:
        return []
    if not 0 <= k <= len(attr_set.attributes):
        raise ValueError(f"k must be in [0, {len(attr_set.attributes)}], got {k}")
    _require_matching_stats(attr_set, stats)
    row = _single_image_styles(model, image)
    y = attr_set.target_class

    base_logits = np.asarray(model.classify(model.generate_from_styles(row[None])), dtype=np.float64)[0]
    rows = np.stack(
        [
            apply_attributes(row, [attr], stats, attr_set.layer_channels, attr_set.alpha)
            for attr in attr_set.attributes
        ]
    )
    logits = np.asarray(model.classify(model.generate_from_styles(rows)), dtype=np.float64)
    gains = logits[:, y] - base_logits[y]
    order = np.argsort(-gains, kind="stable")
    return [(attr_set.attributes[int(i)], float(gains[int(i)])) for i in order[:k]]


def subset_greedy(
    model: StyleModel,
    image: np.ndarray,
    attr_set: AttributeSet,
    k_max: int,
    stats: StyleStats,
) -> CounterfactualResult:
    """Accumulate attribute edits by best marginal gain until the class flips.

    Stops as soon as the classifier's argmax reaches the target class, the
    budget is spent, or no unused attribute still improves the target logit
    (no-progress guard).  Ties go to the earlier-ranked attribute.  Greedy
    choices depend only on the current style state, so the k-budget run's
    applied list is a prefix of any larger budget's list.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    _require_matching_stats(attr_set, stats)
    y = attr_set.target_class

    image = np.asarray(image)
    row = _single_image_styles(model, image)
    original = np.asarray(model.generate_from_styles(row[None]))[0]
    logits_before = np.asarray(model.classify(original[None]), dtype=np.float64)[0]
    # The pipeline lives in reconstruction space, so the counter-example
    # precondition is judged on the replay, same as discovery's baseline.
    if int(np.argmax(logits_before)) == y:
        raise ValueError(f"image is already classified as {y}")

    current = row.copy()
    current_logits = logits_before.copy()
    unused = list(attr_set.attributes)
    applied: list[Attribute] = []
    budget = min(k_max, len(unused))
    while len(applied) < budget and unused and int(np.argmax(current_logits)) != y:
        candidate_rows = np.stack(
            [apply_attributes(current, [attr], stats, attr_set.layer_channels, attr_set.alpha) for attr in unused]
        )
        logits = np.asarray(model.classify(model.generate_from_styles(candidate_rows)), dtype=np.float64)
        gains = logits[:, y] - current_logits[y]
        best = int(np.argmax(gains))  # first max: earlier-ranked attribute wins ties
        if not gains[best] > 0:
            break
        current = candidate_rows[best]
        current_logits = logits[best]
        applied.append(unused.pop(best))

    modified = np.asarray(model.generate_from_styles(current[None]))[0]
    logits_after = np.asarray(model.classify(modified[None]), dtype=np.float64)[0]
    flipped = int(np.argmax(logits_after)) == y and int(np.argmax(logits_before)) != y
    return CounterfactualResult(
        target_class=y,
        applied=tuple(applied),
        original=original,
        modified=modified,
        logits_before=logits_before,
        logits_after=logits_after,
        flipped=flipped,
    )


def save_counterfactual_json(result: CounterfactualResult, path: str, meta: Optional[dict] = None) -> None:
    import json

    payload = result.to_json_dict()
    if meta:
        payload["_meta"] = meta
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
