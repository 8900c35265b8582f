"""Figure strips, curves, and the HTML report.

Renderers take models and produce PNGs plus JSON sidecars into a run
directory; ``emit_html_report`` is a pure view over whatever serialized
artifacts the directory already holds.  It never recomputes a number, it
renders placeholders for missing sections, and its output is byte-stable for
a given set of artifacts.
"""

from __future__ import annotations

import html
import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .attfind import Attribute, AttributeSet
from .core import StyleModel, StyleStats
from .explain import CounterfactualResult, apply_attributes

STRIP_DIR = "strips"
EXPLANATION_DIR = "explanations"
TABLE_DIR = "tables"
REPORT_NAME = "report.html"


def _to_display(image: np.ndarray) -> np.ndarray:
    """Map a (3, H, W) or (C, H, W) image in [-1, 1] to HWC in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {arr.shape}")
    arr = np.clip((arr + 1.0) / 2.0, 0.0, 1.0)
    if arr.shape[0] == 3:
        return np.transpose(arr, (1, 2, 0))
    # fall back to the first channel as grayscale (oracle worlds use 1 x 1 x k)
    return arr[0]


@dataclass(frozen=True)
class AttributeStrip:
    """Exemplar originals and counterfactuals for one discovered attribute."""

    attribute: Attribute
    target_class: int
    image_indices: tuple[int, ...]
    originals: np.ndarray
    counterfactuals: np.ndarray
    prob_before: tuple[float, ...]
    prob_after: tuple[float, ...]
    deltas: tuple[float, ...]

    def __post_init__(self):
        n = len(self.image_indices)
        if not (
            self.originals.shape[0] == n
            and self.counterfactuals.shape[0] == n
            and len(self.prob_before) == n
            and len(self.prob_after) == n
            and len(self.deltas) == n
        ):
            raise ValueError("strip fields disagree on exemplar count")

    def meta_dict(self) -> dict:
        return {
            "attribute": self.attribute.to_json_dict(),
            "class": self.target_class,
            "image_indices": list(self.image_indices),
            "prob_before": [round(float(p), 6) for p in self.prob_before],
            "prob_after": [round(float(p), 6) for p in self.prob_after],
            "deltas": [round(float(d), 6) for d in self.deltas],
        }


def build_attribute_strip(
    model: StyleModel,
    images: np.ndarray,
    attr_set: AttributeSet,
    rank: int,
    stats: StyleStats,
    count: int = 6,
) -> AttributeStrip:
    """Pick the ``count`` images where the ranked attribute moves the target
    logit most, and render their single-edit counterfactuals.

    Originals are replays of the captured styles so the pair differs only in
    the intervened coordinate.
    """
    if not 0 <= rank < len(attr_set.attributes):
        raise ValueError(
            f"rank {rank} out of range for an attribute set of {len(attr_set.attributes)}"
        )
    if count < 1:
        raise ValueError("count must be >= 1")
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise ValueError("need at least one image")
    attribute = attr_set.attributes[rank]
    y = attr_set.target_class

    styles = np.asarray(model.capture_styles(images), dtype=np.float64)
    originals = model.generate_from_styles(styles)
    base_logits = np.asarray(model.classify(originals), dtype=np.float64)
    edited = np.stack(
        [
            apply_attributes(styles[i], [attribute], stats, attr_set.layer_channels, attr_set.alpha)
            for i in range(styles.shape[0])
        ]
    )
    counterfactuals = model.generate_from_styles(edited)
    new_logits = np.asarray(model.classify(counterfactuals), dtype=np.float64)
    deltas = new_logits[:, y] - base_logits[:, y]

    take = min(count, images.shape[0])
    chosen = np.argsort(-deltas, kind="stable")[:take]

    def _prob(logits: np.ndarray) -> float:
        z = logits - logits.max()
        e = np.exp(z)
        return float(e[y] / e.sum())

    return AttributeStrip(
        attribute=attribute,
        target_class=y,
        image_indices=tuple(int(i) for i in chosen),
        originals=np.asarray(originals)[chosen],
        counterfactuals=np.asarray(counterfactuals)[chosen],
        prob_before=tuple(_prob(base_logits[i]) for i in chosen),
        prob_after=tuple(_prob(new_logits[i]) for i in chosen),
        deltas=tuple(float(deltas[i]) for i in chosen),
    )


def _overlay(ax, text: str) -> None:
    ax.text(
        0.03,
        0.97,
        text,
        transform=ax.transAxes,
        fontsize=7,
        va="top",
        ha="left",
        color="white",
        bbox={"facecolor": "black", "alpha": 0.6, "pad": 1.5, "edgecolor": "none"},
    )


def render_attribute_strip_png(strip: AttributeStrip, path: str) -> None:
    """Two-row figure: originals on top, counterfactuals below, target-class
    probability burned into each panel."""
    n = len(strip.image_indices)
    fig, axes = plt.subplots(2, n, figsize=(1.6 * n, 3.4), squeeze=False)
    coord = strip.attribute.coord
    sign = "+" if strip.attribute.direction > 0 else "-"
    fig.suptitle(
        f"class {strip.target_class}: layer {coord.layer_index} channel {coord.channel_index} ({sign})",
        fontsize=9,
    )
    for j in range(n):
        ax_top, ax_bot = axes[0][j], axes[1][j]
        ax_top.imshow(_to_display(strip.originals[j]), interpolation="nearest")
        _overlay(ax_top, f"p={strip.prob_before[j]:.2f}")
        ax_bot.imshow(_to_display(strip.counterfactuals[j]), interpolation="nearest")
        _overlay(ax_bot, f"p={strip.prob_after[j]:.2f}")
        for ax in (ax_top, ax_bot):
            ax.set_xticks([])
            ax.set_yticks([])
    axes[0][0].set_ylabel("original", fontsize=8)
    axes[1][0].set_ylabel("edited", fontsize=8)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def render_explanation_png(result: CounterfactualResult, path: str) -> None:
    """Original next to its multi-edit counterfactual with probabilities."""
    fig, axes = plt.subplots(1, 2, figsize=(4.2, 2.4))
    axes[0].imshow(_to_display(result.original), interpolation="nearest")
    _overlay(axes[0], f"p={result.prob_before():.2f}")
    axes[0].set_title("original", fontsize=8)
    axes[1].imshow(_to_display(result.modified), interpolation="nearest")
    _overlay(axes[1], f"p={result.prob_after():.2f}")
    flip = "flipped" if result.flipped else "not flipped"
    axes[1].set_title(f"{len(result.applied)} edits ({flip})", fontsize=8)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def render_sufficiency_curve_png(reports: list[dict], path: str) -> None:
    """Step curve of flip fraction against edit budget, one line per report."""
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    for rep in reports:
        ks = list(range(1, rep["k_max"] + 1))
        label = rep.get("selector", "attfind")
        ax.plot(ks, rep["per_k_fractions"], marker="o", markersize=3, label=str(label))
    ax.set_xlabel("edit budget k")
    ax.set_ylabel("flip fraction")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def write_strip_for_rank(
    model: StyleModel,
    images: np.ndarray,
    attr_set: AttributeSet,
    rank: int,
    stats: StyleStats,
    run_dir: str,
    count: int = 6,
) -> str:
    """Render one strip PNG plus its JSON sidecar; returns the PNG path."""
    strip = build_attribute_strip(model, images, attr_set, rank, stats, count=count)
    class_dir = os.path.join(run_dir, STRIP_DIR, f"class_{attr_set.target_class}")
    os.makedirs(class_dir, exist_ok=True)
    png_path = os.path.join(class_dir, f"attr_{rank}.png")
    render_attribute_strip_png(strip, png_path)
    with open(os.path.join(class_dir, f"attr_{rank}.json"), "w") as fh:
        json.dump(strip.meta_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return png_path


def _load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _section(title: str, body: str) -> str:
    return f"<section>\n<h2>{html.escape(title)}</h2>\n{body}\n</section>"


def _placeholder(what: str) -> str:
    return f'<p class="placeholder">{html.escape(what)} has not been generated for this run.</p>'


def _fmt(value, digits: int = 4) -> str:
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


_CSS = """
body { font-family: sans-serif; margin: 2em auto; max-width: 64em; color: #222; }
h1 { border-bottom: 2px solid #444; padding-bottom: 0.2em; }
h2 { margin-top: 1.6em; }
table { border-collapse: collapse; margin: 0.8em 0; }
th, td { border: 1px solid #999; padding: 0.3em 0.8em; text-align: right; }
th { background: #eee; }
td.label, th.label { text-align: left; }
img.strip { max-width: 100%; border: 1px solid #ccc; margin: 0.4em 0; }
p.placeholder { color: #a33; font-style: italic; }
code { background: #f4f4f4; padding: 0 0.25em; }
"""


def emit_html_report(run_dir: str) -> tuple[str, bool]:
    """Assemble report.html from the artifacts already present in run_dir.

    Pure view: every number is read from a JSON/CSV artifact, missing
    sections become placeholders, and referenced images are link-checked.
    Returns (report path, complete) where complete means no placeholders and
    no broken links.
    """
    if not os.path.isdir(run_dir):
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    sections: list[str] = []
    complete = True
    links: list[str] = []

    def note_placeholder(what: str) -> str:
        nonlocal complete
        complete = False
        return _placeholder(what)

    # Run header from the bundle manifest, if one exists.
    manifest_path = os.path.join(run_dir, "gan.pt.manifest.json")
    if os.path.exists(manifest_path):
        m = _load_json(manifest_path)
        rows = []
        for key in ("training_step", "cst_enabled", "seed", "classifier_hash", "spec_digest", "config_digest"):
            if key in m:
                rows.append(
                    f'<tr><td class="label">{html.escape(key)}</td>'
                    f"<td>{html.escape(_fmt(m[key]))}</td></tr>"
                )
        spec = m.get("spec", {})
        for key in sorted(spec):
            rows.append(
                f'<tr><td class="label">spec.{html.escape(key)}</td>'
                f"<td>{html.escape(json.dumps(spec[key]))}</td></tr>"
            )
        sections.append(_section("Run", "<table>" + "".join(rows) + "</table>"))
    else:
        sections.append(_section("Run", note_placeholder("A trained generator manifest")))

    # Training curve summary from the CSV log.
    log_path = os.path.join(run_dir, "training_log.csv")
    if os.path.exists(log_path):
        with open(log_path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if len(lines) >= 2:
            header = lines[0].split(",")
            first = lines[1].split(",")
            last = lines[-1].split(",")
            rows = "".join(
                f'<tr><td class="label">{html.escape(name)}</td>'
                f"<td>{html.escape(a)}</td><td>{html.escape(b)}</td></tr>"
                for name, a, b in zip(header, first, last)
            )
            body = (
                f"<p>{len(lines) - 1} logged steps; first and last row of "
                f"<code>training_log.csv</code>:</p>"
                f'<table><tr><th class="label">column</th><th>first</th><th>last</th></tr>{rows}</table>'
            )
            sections.append(_section("Training", body))
        else:
            sections.append(_section("Training", note_placeholder("A non-empty training log")))
    else:
        sections.append(_section("Training", note_placeholder("A training log")))

    # Discovered attributes and their strips.
    attr_dir = os.path.join(run_dir, "attributes")
    attr_files = (
        sorted(f for f in os.listdir(attr_dir) if f.startswith("class_") and f.endswith(".json"))
        if os.path.isdir(attr_dir)
        else []
    )
    if attr_files:
        parts = []
        for fname in attr_files:
            data = _load_json(os.path.join(attr_dir, fname))
            y = data["class"]
            selector = data.get("selector", "attfind")
            head = (
                '<tr><th>rank</th><th>layer</th><th>channel</th><th>direction</th>'
                "<th>mean delta</th><th>images explained</th></tr>"
            )
            rows = "".join(
                f"<tr><td>{a['rank']}</td><td>{a['layer']}</td><td>{a['channel']}</td>"
                f"<td>{'+1' if a['direction'] > 0 else '-1'}</td>"
                f"<td>{_fmt(float(a['mean_delta']))}</td><td>{a['images_explained']}</td></tr>"
                for a in data["attributes"]
            )
            parts.append(
                f"<h3>class {html.escape(str(y))} ({html.escape(str(selector))}, "
                f"t={html.escape(_fmt(float(data['t'])))}, alpha={html.escape(_fmt(float(data['alpha'])))})</h3>"
                f"<table>{head}{rows}</table>"
            )
            strip_dir = os.path.join(run_dir, STRIP_DIR, f"class_{y}")
            if selector == "attfind":
                for a in data["attributes"]:
                    rel = f"{STRIP_DIR}/class_{y}/attr_{a['rank']}.png"
                    if os.path.exists(os.path.join(run_dir, rel)):
                        links.append(rel)
                        parts.append(f'<img class="strip" src="{html.escape(rel)}" alt="attribute strip rank {a["rank"]}">')
                    else:
                        parts.append(note_placeholder(f"Strip image for class {y} rank {a['rank']}"))
        sections.append(_section("Discovered attributes", "\n".join(parts)))
    else:
        sections.append(_section("Discovered attributes", note_placeholder("An attribute set")))

    # Per-image explanations.
    expl_dir = os.path.join(run_dir, EXPLANATION_DIR)
    expl_files = (
        sorted(f for f in os.listdir(expl_dir) if f.endswith(".json")) if os.path.isdir(expl_dir) else []
    )
    if expl_files:
        parts = []
        for fname in expl_files:
            data = _load_json(os.path.join(expl_dir, fname))
            stem = fname[: -len(".json")]
            rel = f"{EXPLANATION_DIR}/{stem}.png"
            edits = ", ".join(
                f"L{a['layer']}C{a['channel']}{'+' if a['direction'] > 0 else '-'}"
                for a in data.get("applied", [])
            )
            flip = "flipped" if data.get("flipped") else "not flipped"
            parts.append(
                f"<h3>{html.escape(stem)}</h3>"
                f"<p>{html.escape(flip)}; edits: {html.escape(edits or 'none')}; "
                f"p(target) {_fmt(float(data['prob_before']))} &rarr; {_fmt(float(data['prob_after']))}</p>"
            )
            if os.path.exists(os.path.join(run_dir, rel)):
                links.append(rel)
                parts.append(f'<img class="strip" src="{html.escape(rel)}" alt="explanation {html.escape(stem)}">')
            else:
                parts.append(note_placeholder(f"Panel image for {stem}"))
        sections.append(_section("Counterfactual explanations", "\n".join(parts)))
    else:
        sections.append(_section("Counterfactual explanations", note_placeholder("Per-image explanations")))

    # Sufficiency table and curve.
    suff_path = os.path.join(run_dir, TABLE_DIR, "sufficiency.json")
    if os.path.exists(suff_path):
        data = _load_json(suff_path)
        reports = data if isinstance(data, list) else [data]
        head_cells = "".join(f"<th>k={k}</th>" for k in range(1, max(r["k_max"] for r in reports) + 1))
        rows = []
        for r in reports:
            cells = "".join(f"<td>{_fmt(float(v))}</td>" for v in r["per_k_fractions"])
            rows.append(
                f'<tr><td class="label">{html.escape(str(r.get("selector", "attfind")))} '
                f'(class {r["class"]}, n={r["num_images"]})</td>{cells}</tr>'
            )
        body = f'<table><tr><th class="label">selector</th>{head_cells}</tr>{"".join(rows)}</table>'
        rel = "sufficiency_curve.png"
        if os.path.exists(os.path.join(run_dir, rel)):
            links.append(rel)
            body += f'\n<img class="strip" src="{rel}" alt="sufficiency curve">'
        sections.append(_section("Sufficiency", body))
    else:
        sections.append(_section("Sufficiency", note_placeholder("A sufficiency table")))

    # Selector comparison.
    abl_path = os.path.join(run_dir, TABLE_DIR, "ablation.json")
    if os.path.exists(abl_path):
        data = _load_json(abl_path)
        fractions = data["flip_fraction"]
        head = (
            '<tr><th class="label">dataset</th><th>Wu baseline</th>'
            "<th>w/o conditioning</th><th>conditioned</th></tr>"
        )
        row = (
            f'<tr><td class="label">{html.escape(str(data.get("dataset", "")))}</td>'
            f"<td>{_fmt(float(fractions['wu_baseline']))}</td>"
            f"<td>{_fmt(float(fractions['no_cst']))}</td>"
            f"<td>{_fmt(float(fractions['cst']))}</td></tr>"
        )
        gap = float(data.get("cst_gap", 0.0))
        body = (
            f"<table>{head}{row}</table>"
            f"<p>conditioning gap (conditioned &minus; unconditioned): {_fmt(gap)}</p>"
        )
        sections.append(_section("Selector comparison", body))
    else:
        sections.append(_section("Selector comparison", note_placeholder("A selector comparison table")))

    # Link check on everything we referenced.
    broken = [rel for rel in links if not os.path.exists(os.path.join(run_dir, rel))]
    if broken:
        complete = False

    page = (
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        "<title>counterfactual attribute report</title>\n"
        f"<style>{_CSS}</style>\n</head>\n<body>\n"
        "<h1>Counterfactual attribute report</h1>\n"
        + "\n".join(sections)
        + "\n</body>\n</html>\n"
    )
    out_path = os.path.join(run_dir, REPORT_NAME)
    with open(out_path, "w") as fh:
        fh.write(page)
    return out_path, complete
