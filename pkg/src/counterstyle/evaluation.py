"""Sufficiency evaluation, a value-difference baseline selector, and ablations.

The headline metric is the flip fraction: over a pool of images the
classifier does not assign to the target class, the fraction whose predicted
label flips to it after greedily applying at most k discovered attribute
edits.  The value-difference baseline ranks coordinates by how differently
they are DISTRIBUTED across predicted classes, without ever intervening; it
exists to show that distributional difference is not causal influence.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attfind import Attribute, AttributeSet
from .core import StyleModel, StyleStats, coordinate_at, digest_of
from .explain import subset_greedy


@dataclass(frozen=True)
class SufficiencyReport:
    """Flip fractions per edit budget 1..k_max for one attribute set."""

    target_class: int
    k_max: int
    num_images: int
    flip_fraction: float
    per_k_fractions: tuple[float, ...]
    attrs_ref: str
    selector: str = "attfind"

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.num_images < 0:
            raise ValueError("num_images must be >= 0")
        if self.num_images == 0 and any(f != 0.0 for f in self.per_k_fractions):
            raise ValueError("an empty pool cannot have nonzero flip fractions")
        if len(self.per_k_fractions) != self.k_max:
            raise ValueError(f"need {self.k_max} per-budget fractions, got {len(self.per_k_fractions)}")
        fractions = tuple(float(f) for f in self.per_k_fractions)
        for f in fractions:
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"fraction {f} outside [0, 1]")
        if any(b < a for a, b in zip(fractions, fractions[1:])):
            raise ValueError(f"per-budget fractions must be nondecreasing, got {fractions}")
        if fractions[-1] != float(self.flip_fraction):
            raise ValueError("flip_fraction must equal the k_max budget fraction")
        object.__setattr__(self, "per_k_fractions", fractions)

    def to_json_dict(self) -> dict:
        return {
            "class": self.target_class,
            "k_max": self.k_max,
            "num_images": self.num_images,
            "flip_fraction": float(self.flip_fraction),
            "per_k_fractions": list(self.per_k_fractions),
            "attrs_ref": self.attrs_ref,
            "selector": self.selector,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SufficiencyReport":
        return cls(
            target_class=int(d["class"]),
            k_max=int(d["k_max"]),
            num_images=int(d["num_images"]),
            flip_fraction=float(d["flip_fraction"]),
            per_k_fractions=tuple(float(f) for f in d["per_k_fractions"]),
            attrs_ref=str(d["attrs_ref"]),
            selector=str(d.get("selector", "attfind")),
        )


def sufficiency(
    model: StyleModel,
    images: np.ndarray,
    attr_set: AttributeSet,
    stats: StyleStats,
    k_max: int = 10,
) -> SufficiencyReport:
    """Flip fraction of greedy counterfactuals at every budget up to k_max.

    Greedy prefixes nest, so one k_max-budget run per image pins down the
    flip step for every smaller budget as well.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise ValueError("sufficiency needs at least one image")

    # Budgets range over the ranked top-k_max attributes only; a lower-ranked
    # attribute never competes for a slot a budget could not afford.
    if len(attr_set.attributes) > k_max:
        attr_set = dataclasses.replace(attr_set, attributes=attr_set.attributes[:k_max])

    flip_steps: list[Optional[int]] = []
    for i in range(images.shape[0]):
        if attr_set.attributes:
            result = subset_greedy(model, images[i], attr_set, k_max=k_max, stats=stats)
            flip_steps.append(len(result.applied) if result.flipped else None)
        else:
            flip_steps.append(None)

    n = len(flip_steps)
    per_k = tuple(
        sum(1 for s in flip_steps if s is not None and s <= k) / n for k in range(1, k_max + 1)
    )
    return SufficiencyReport(
        target_class=attr_set.target_class,
        k_max=k_max,
        num_images=n,
        flip_fraction=per_k[-1],
        per_k_fractions=per_k,
        attrs_ref=digest_of(attr_set.to_json_dict()),
        selector=attr_set.selector,
    )


def wu_selector(
    model: StyleModel,
    images: np.ndarray,
    target_class: int,
    max_attributes: int,
    stats: StyleStats,
    alpha: float = 3.0,
) -> AttributeSet:
    """Rank coordinates by normalized value difference across predicted classes.

    score = |mean_y - mean_rest| / sqrt((var_y + var_rest) / 2), computed from
    captured style values split by the classifier's predicted labels.  Purely
    observational: no generation, no interventions.  Zero-score coordinates
    (identical distributions, or zero pooled spread) are never selected.
    The returned set stores the score in each attribute's mean_delta slot and
    the push direction as sign(mean_y - mean_rest).
    """
    if max_attributes < 1:
        raise ValueError("max_attributes must be >= 1")
    images = np.asarray(images)
    if images.shape[0] < 2:
        raise ValueError("need at least 2 images to compare classes")
    preds = np.argmax(np.asarray(model.classify(images), dtype=np.float64), axis=1)
    in_class = preds == target_class
    if not in_class.any() or in_class.all():
        raise ValueError(
            f"predicted labels must cover class {target_class} and at least one other class; "
            f"got counts {int(in_class.sum())} vs {int((~in_class).sum())}"
        )
    styles = np.asarray(model.capture_styles(images), dtype=np.float64)

    mean_in = styles[in_class].mean(axis=0)
    mean_out = styles[~in_class].mean(axis=0)
    var_in = styles[in_class].var(axis=0)
    var_out = styles[~in_class].var(axis=0)
    pooled = np.sqrt((var_in + var_out) / 2.0)
    diff = mean_in - mean_out
    with np.errstate(invalid="ignore", divide="ignore"):
        score = np.where(pooled > 0.0, np.abs(diff) / pooled, 0.0)

    order = np.argsort(-score, kind="stable")
    attributes = []
    for flat in order[:max_attributes]:
        flat = int(flat)
        if not score[flat] > 0.0:
            break
        attributes.append(
            Attribute(
                coord=coordinate_at(flat, model.layer_channels),
                direction=1 if diff[flat] > 0 else -1,
                mean_delta=float(score[flat]),
                images_explained=0,
                rank=len(attributes),
            )
        )
    return AttributeSet(
        target_class=target_class,
        attributes=tuple(attributes),
        max_attributes=max_attributes,
        threshold=0.0,
        alpha=alpha,
        stats_ref=stats.digest(),
        layer_channels=tuple(model.layer_channels),
        selector="wu",
    )


@dataclass(frozen=True)
class AblationComparison:
    """Sufficiency of three selector/training variants on one evaluation pool."""

    dataset_name: str
    target_class: int
    wu: SufficiencyReport
    no_cst: SufficiencyReport
    cst: SufficiencyReport

    @property
    def cst_gap(self) -> float:
        return float(self.cst.flip_fraction - self.no_cst.flip_fraction)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset_name,
            "class": self.target_class,
            "columns": ["wu_baseline", "no_cst", "cst"],
            "flip_fraction": {
                "wu_baseline": self.wu.flip_fraction,
                "no_cst": self.no_cst.flip_fraction,
                "cst": self.cst.flip_fraction,
            },
            "per_k_fractions": {
                "wu_baseline": list(self.wu.per_k_fractions),
                "no_cst": list(self.no_cst.per_k_fractions),
                "cst": list(self.cst.per_k_fractions),
            },
            "cst_gap": self.cst_gap,
            "k_max": self.cst.k_max,
            "num_images": {
                "wu_baseline": self.wu.num_images,
                "no_cst": self.no_cst.num_images,
                "cst": self.cst.num_images,
            },
        }

    def render_text(self) -> str:
        """Fixed-width table: one dataset row, one column per variant."""
        header = f"flip fraction at budget k<={self.cst.k_max} (class {self.target_class}, n={self.cst.num_images})"
        cols = ["dataset", "Wu baseline", "w/o CST", "CST"]
        row = [
            self.dataset_name or "-",
            f"{self.wu.flip_fraction * 100:.1f}%",
            f"{self.no_cst.flip_fraction * 100:.1f}%",
            f"{self.cst.flip_fraction * 100:.1f}%",
        ]
        widths = [max(len(c), len(r)) for c, r in zip(cols, row)]
        line1 = "  ".join(c.ljust(w) for c, w in zip(cols, widths))
        line2 = "  ".join(r.rjust(w) for r, w in zip(row, widths))
        return "\n".join([header, line1, line2])


def ablation_compare(
    cst_model: StyleModel,
    no_cst_model: StyleModel,
    images: np.ndarray,
    target_class: int,
    max_attributes: int = 10,
    threshold: float = 1.0,
    alpha: float = 3.0,
    k_max: int = 10,
    dataset_name: str = "",
    stats_images: Optional[np.ndarray] = None,
    batch_size: int = 128,
) -> AblationComparison:
    """Run discovery + sufficiency on both bundles and the baseline selector.

    Both models must share the frozen classifier (checked by digest) so all
    three columns answer to the same judge.  ``images`` is the evaluation
    pool; since each model explains its own reconstructions, the pool is
    filtered per model to the images whose replay is predicted as some other
    class (a model whose reconstruction already lands on the target class
    cannot explain that image, and an empty valid pool scores zero).
    ``stats_images`` should be a mixed-prediction pool, used for style
    statistics and for the baseline selector, which needs both predicted
    classes present.  The baseline column selects with the value-difference
    score but is evaluated on the conditioned model, giving it the strongest
    generator available.
    """
    from .attfind import att_find
    from .core import compute_style_stats

    if cst_model.classifier_digest() != no_cst_model.classifier_digest():
        raise ValueError("ablation requires both bundles to share one frozen classifier")

    images = np.asarray(images)
    pool_source = images if stats_images is None else np.asarray(stats_images)

    def replay_counter_pool(model) -> np.ndarray:
        keep = []
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start : start + batch_size]
            replay = model.generate_from_styles(model.capture_styles(chunk))
            preds = np.argmax(np.asarray(model.classify(replay)), axis=1)
            keep.append(preds != target_class)
        mask = np.concatenate(keep) if keep else np.zeros(0, dtype=bool)
        return images[mask]

    def zero_report(stats, selector: str) -> SufficiencyReport:
        return SufficiencyReport(
            target_class=target_class,
            k_max=k_max,
            num_images=0,
            flip_fraction=0.0,
            per_k_fractions=(0.0,) * k_max,
            attrs_ref=stats.digest(),
            selector=selector,
        )

    reports = {}
    pools = {}
    for name, model in (("cst", cst_model), ("no_cst", no_cst_model)):
        stats = compute_style_stats(np.asarray(model.capture_styles(pool_source), dtype=np.float64))
        pool = replay_counter_pool(model)
        pools[name] = pool
        if pool.shape[0] == 0:
            reports[name] = zero_report(stats, "attfind")
        else:
            attrs = att_find(
                model,
                pool,
                target_class=target_class,
                max_attributes=max_attributes,
                threshold=threshold,
                stats=stats,
                alpha=alpha,
                batch_size=batch_size,
            )
            reports[name] = sufficiency(model, pool, attrs, stats, k_max=k_max)
        if name == "cst":
            cst_stats = stats

    wu_attrs = wu_selector(cst_model, pool_source, target_class, max_attributes, cst_stats, alpha=alpha)
    if pools["cst"].shape[0] == 0:
        reports["wu"] = zero_report(cst_stats, "wu")
    else:
        reports["wu"] = sufficiency(cst_model, pools["cst"], wu_attrs, cst_stats, k_max=k_max)

    return AblationComparison(
        dataset_name=dataset_name,
        target_class=target_class,
        wu=reports["wu"],
        no_cst=reports["no_cst"],
        cst=reports["cst"],
    )


def save_report_json(report, path: str, meta: Optional[dict] = None) -> None:
    payload = report if isinstance(report, (dict, list)) else report.to_json_dict()
    if meta:
        payload["_meta"] = meta
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
