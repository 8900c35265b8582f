"""Acceptance gate: one test per release criterion, one verdict line each.

Criteria 1-6 and 9 are analytic or tiny-model checks and run in seconds to a
couple of minutes.  Criteria 7, 8, and 10 train real generators on the 32x32
shapes data through the CLI and dominate the suite's wall time; they share
module-scoped fixtures so each pipeline runs at most once.
"""

import json
import math
import os
import re
import time
import warnings

import numpy as np
import pytest
import torch

import reference
import worldgen
from conftest import run_tiny_pipeline
from counterstyle.attfind import FLAG_EARLY_STOP, FLAG_NO_EFFECT, att_find
from counterstyle.cli import main as cli_main
from counterstyle.core import (
    StyleStats,
    StyleVectorSet,
    ZeroVarianceWarning,
    compute_style_stats,
    coordinate_at,
    intervene,
    intervention_value,
)
from counterstyle.evaluation import SufficiencyReport, sufficiency, wu_selector
from counterstyle.losses import classifier_kl
from counterstyle.models import ConvClassifier, GeneratorSpec, ModelBundle, load_bundle
from counterstyle.worlds import load_dataset, make_confounded_world, make_quadratic_world
from test_losses import TestGradientsAgainstFiniteDifferences as _GradCheck

FLAG_FOR_REFERENCE = {reference.NO_EFFECT: FLAG_NO_EFFECT, reference.EARLY_STOP: FLAG_EARLY_STOP}


def verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


def run_cli(step: str, argv: list[str], allow: tuple[int, ...] = (0,)) -> int:
    code = cli_main(argv)
    assert code in allow, f"{step} exited {code}, expected one of {allow}"
    return code


# ------------------------------------------------------------------ 1


def test_criterion_1_attfind_matches_brute_force_transcription():
    """Greedy discovery reproduces the brute-force reference exactly on
    randomized mixed worlds (K <= 16, N <= 32), in under a minute."""
    rng = np.random.default_rng(101)
    start = time.monotonic()
    cases = 0
    kinds_seen = set()
    while cases < 24 or len(kinds_seen) < 3:
        assert cases < 60, f"only saw kinds {kinds_seen} after {cases} cases"
        world, target, pool, stats, max_attrs, threshold = worldgen.random_case(rng)
        assert world.k <= 16 and pool.shape[0] <= 32
        kinds_seen.add(world.kind)

        got = att_find(world, pool, target, max_attributes=max_attrs, threshold=threshold, stats=stats)
        want_rows, want_flags = reference.brute_force_search(
            world, pool, target, max_attributes=max_attrs, threshold=threshold, stats=stats
        )

        got_rows = [
            (a.coord.layer_index, a.coord.channel_index, a.direction, a.images_explained, a.rank)
            for a in got.attributes
        ]
        assert got_rows == [
            (r["layer"], r["channel"], r["direction"], r["images_explained"], r["rank"])
            for r in want_rows
        ], f"case {cases} ({world.kind}): selection sequences differ"
        for a, r in zip(got.attributes, want_rows):
            assert math.isclose(a.mean_delta, r["mean_delta"], rel_tol=1e-12, abs_tol=1e-12)
        assert list(got.flags) == [FLAG_FOR_REFERENCE[f] for f in want_flags]
        cases += 1

    elapsed = time.monotonic() - start
    verdict(
        1,
        elapsed < 60.0,
        f"{cases} randomized worlds (kinds {sorted(kinds_seen)}) matched the brute-force "
        f"transcription exactly in {elapsed:.1f}s",
    )


# ------------------------------------------------------------------ 2


def _quadratic_pool(world, rng, column, low, high, sign=1.0, n=24):
    """Counter-class pool whose quadratic column sits in a controlled band."""
    styles = rng.standard_normal((n, world.k))
    styles[:, column] = sign * rng.uniform(low, high, size=n)
    preds = np.argmax(world.logits_from_styles(styles), axis=1)
    pool = world.generate_from_styles(styles[preds != 1])
    assert pool.shape[0] >= 8, "pool construction failed to stay counter-class"
    return pool


def test_criterion_2_symmetric_coordinate_rejected_until_off_vertex():
    """A squared coordinate helps in both directions from its vertex, so the
    direction-consistency rule must never select it; sampling the population
    away from the vertex restores one consistent direction and it becomes
    selectable with the matching sign."""
    rng = np.random.default_rng(202)
    worlds = 0
    for _ in range(12):
        k = int(rng.integers(4, 11))
        q = int(rng.integers(0, k))
        quad_weight = float(rng.choice([0.5, 1.0, 2.0]))

        # Vertex at the population mean: +alpha and -alpha pushes raise the
        # squared term equally, so the coordinate must never appear.
        lin = np.zeros(k)
        others = [i for i in range(k) if i != q]
        for i in rng.choice(others, size=min(2, len(others)), replace=False):
            lin[i] = float(rng.choice([-0.5, 0.5]))
        centered = make_quadratic_world(k, q, quad_weight=quad_weight, linear_weights=lin, bias=-2.0)
        stats = StyleStats(mean=np.zeros(k), std=np.ones(k), sample_count=40)
        pool = _quadratic_pool(centered, rng, q, low=0.0, high=1.2)
        attrs = att_find(centered, pool, 1, max_attributes=k, threshold=0.25, stats=stats)
        picked = {a.coord.channel_index for a in attrs.attributes}
        assert q not in picked, f"symmetric coordinate {q} selected in centered world"

        # Same world without linear terms: nothing else can move the logit,
        # so the search must come back empty rather than fall back to q.
        bare = make_quadratic_world(k, q, quad_weight=quad_weight, bias=-2.0)
        bare_attrs = att_find(bare, pool, 1, max_attributes=k, threshold=0.25, stats=stats)
        assert len(bare_attrs.attributes) == 0 and FLAG_NO_EFFECT in bare_attrs.flags

        # Population centered one side of the vertex: only the push away from
        # the vertex raises the logit, and its sign follows the center's.
        side = int(rng.choice([-1, 1]))
        off_stats = StyleStats(mean=np.full(k, 2.0 * side), std=np.ones(k), sample_count=40)
        off = make_quadratic_world(k, q, quad_weight=quad_weight, bias=-8.0)
        off_pool = _quadratic_pool(off, rng, q, low=1.05, high=2.7, sign=side)
        off_attrs = att_find(off, off_pool, 1, max_attributes=1, threshold=0.25, stats=off_stats)
        assert len(off_attrs.attributes) == 1
        found = off_attrs.attributes[0]
        assert found.coord.channel_index == q and found.direction == side and found.mean_delta > 0
        worlds += 1

    verdict(
        2,
        worlds == 12,
        f"{worlds} quadratic worlds: symmetric coordinate never selected at the vertex, "
        "selected with the center's sign once off-vertex",
    )


# ------------------------------------------------------------------ 3


def test_criterion_3_loss_identities_and_finite_difference_gradients():
    """KL identities hold exactly and every loss term's analytic gradient
    matches a central finite difference within 1e-3 relative."""
    for p in ([0.5, 0.5], [0.9, 0.1], [1.0, 0.0], [0.2, 0.3, 0.5]):
        t = torch.tensor([p], dtype=torch.float64)
        assert classifier_kl(t, t).item() == 0.0, f"KL(p, p) != 0 for p={p}"

    got = classifier_kl(
        torch.tensor([[0.9, 0.1]], dtype=torch.float64),
        torch.tensor([[0.5, 0.5]], dtype=torch.float64),
    ).item()
    want = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    assert abs(got - 0.3681) < 1e-4 and abs(got - want) < 1e-12

    spec = GeneratorSpec(image_resolution=4, layer_channels=(8,), latent_dim=8, num_classes=2)
    classifier = ConvClassifier(4, num_classes=2, base_channels=8, max_channels=16)
    bundle = ModelBundle.create(spec, classifier, seed=0)
    for module in (bundle.generator, bundle.encoder, bundle.discriminator, bundle.classifier):
        module.double()
    torch.manual_seed(1)
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64) * 2 - 1

    checker = _GradCheck()
    terms = ("adv_g", "rec_x", "lpips", "rec_w", "cls", "reg")
    for name in terms:
        checker.check(name, bundle, x, bundle.generator.synthesis.convs[0].weight)
    checker.check("adv_d", bundle, x, bundle.discriminator.head.weight)
    checker.check("rec_w", bundle, x, bundle.encoder.head.weight)

    verdict(
        3,
        True,
        f"KL identities exact (hand value {got:.6f} nats) and {len(terms) + 2} gradient "
        f"probes within {_GradCheck.REL_TOL:g} of central differences on the 4x4 toy",
    )


# ------------------------------------------------------------------ 4


def test_criterion_4_intervention_purity_and_replay_consistency():
    """10,000 randomized interventions each touch exactly one coordinate
    (zero at fixed points), and synthesis from captured styles reproduces the
    forward pass within 1e-5 per pixel."""
    rng = np.random.default_rng(404)
    calls = fixed_points = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVarianceWarning)
        while calls < 10_000:
            layer_channels = tuple(int(w) for w in rng.integers(1, 7, size=rng.integers(1, 4)))
            k = sum(layer_channels)
            flat = rng.normal(0.0, 2.0, size=k)
            std = rng.uniform(0.2, 3.0, size=k)
            std[rng.random(k) < 0.15] = 0.0
            stats = StyleStats(mean=rng.normal(0.0, 1.0, size=k), std=std, sample_count=3)
            idx = int(rng.integers(0, k))
            direction = int(rng.choice([-1, 1]))
            alpha = float(rng.choice([0.5, 1.0, 3.0]))
            target = intervention_value(stats, idx, direction, alpha)
            if rng.random() < 0.2:
                flat[idx] = target  # force a fixed point
            styles = StyleVectorSet.from_flat(flat, layer_channels)
            before = styles.flat.copy()

            out = intervene(styles, coordinate_at(idx, layer_channels), direction, stats, alpha=alpha)

            assert np.array_equal(styles.flat, before), "input styles were mutated"
            diff = np.flatnonzero(out.flat != before)
            if before[idx] == target:
                assert diff.size == 0, f"fixed point edited at call {calls}"
                fixed_points += 1
            else:
                assert diff.size == 1 and diff[0] == idx, f"touched {diff.tolist()} at call {calls}"
                assert out.flat[idx] == target
            calls += 1
    assert fixed_points > 100, "fixed-point branch was never exercised"

    # Oracle worlds: capture and synthesis are exact inverses, bit for bit.
    world = worldgen.random_world(np.random.default_rng(11))
    styles = world.sample_styles(16, np.random.default_rng(12))
    images = world.generate_from_styles(styles)
    assert np.array_equal(world.capture_styles(images), styles)
    assert np.array_equal(world.generate_from_styles(styles), images)

    # Real generator: synthesize(capture(x)) matches the forward pass.
    spec = GeneratorSpec(image_resolution=16, layer_channels=(16, 8, 8), latent_dim=16, num_classes=2)
    bundle = ModelBundle.create(spec, ConvClassifier(16, 2, base_channels=8, max_channels=16), seed=3)
    worst = 0.0
    torch.manual_seed(5)
    for _ in range(3):
        x = torch.rand(8, 3, 16, 16) * 2 - 1
        with torch.no_grad():
            w = bundle.encoder(x)
            cond = torch.softmax(bundle.classifier(x), dim=1)
            forward_images, flat = bundle.generator(w, cond)
        replayed = bundle.generate_from_styles(flat.numpy().astype(np.float64))
        worst = max(worst, float(np.abs(replayed - forward_images.numpy()).max()))
        again = bundle.generate_from_styles(flat.numpy().astype(np.float64))
        assert np.array_equal(replayed, again), "repeated synthesis disagreed with itself"
    assert worst <= 1e-5, f"replay deviates from forward pass by {worst:.2e}"

    verdict(
        4,
        True,
        f"{calls} interventions touched exactly one coordinate ({fixed_points} fixed points "
        f"untouched); replay within {worst:.1e}/pixel of the forward pass",
    )


# ------------------------------------------------------------------ 5


def test_criterion_5_sufficiency_curves_never_decrease(pipeline):
    """Flip fractions are nondecreasing in the edit budget for every run:
    randomized worlds, the constructor contract, and the CLI artifacts."""
    with pytest.raises(ValueError, match="nondecreasing"):
        SufficiencyReport(
            target_class=1,
            k_max=3,
            num_images=4,
            flip_fraction=0.25,
            per_k_fractions=(0.5, 0.25, 0.25),
            attrs_ref="x",
        )

    rng = np.random.default_rng(505)
    runs = 0
    while runs < 12:
        world, target, pool, stats, max_attrs, threshold = worldgen.random_case(rng)
        if pool.shape[0] == 0:
            continue
        attrs = att_find(world, pool, target, max_attributes=max_attrs, threshold=threshold, stats=stats)
        report = sufficiency(world, pool, attrs, stats, k_max=5)
        fractions = np.asarray(report.per_k_fractions)
        assert np.all(np.diff(fractions) >= 0), f"run {runs}: {fractions}"
        assert report.flip_fraction == fractions[-1]
        runs += 1

    with open(os.path.join(pipeline["run_cst"], "tables", "sufficiency.json")) as fh:
        entries = json.load(fh)
    assert len(entries) == 2
    for entry in entries:
        fractions = entry["per_k_fractions"]
        assert all(a <= b for a, b in zip(fractions, fractions[1:])), entry["selector"]

    verdict(
        5,
        True,
        f"{runs} randomized runs plus {len(entries)} pipeline artifacts all nondecreasing; "
        "decreasing curves rejected at construction",
    )


# ------------------------------------------------------------------ 6


def test_criterion_6_confound_separates_selectors():
    """With a 0.9-strength confound the distributional baseline ranks the
    correlated coordinate in its top 2 while the interventional search
    excludes it."""
    world = make_confounded_world(6, causal_coord=0, correlated_coord=3, strength=0.9)
    images = world.sample_images(400, rng=11)
    stats = compute_style_stats(world.capture_styles(images))

    wu = wu_selector(world, images, target_class=1, max_attributes=2, stats=stats)
    wu_top2 = {a.coord.channel_index for a in wu.attributes}
    assert 3 in wu_top2, f"value-difference baseline missed the confound: top2={wu_top2}"

    preds = np.argmax(world.classify(images), axis=1)
    pool = images[preds != 1][:64]
    causal = att_find(world, pool, target_class=1, max_attributes=2, threshold=1.0, stats=stats)
    causal_coords = {a.coord.channel_index for a in causal.attributes}
    assert 3 not in causal_coords, f"interventional search picked the confound: {causal_coords}"
    assert 0 in causal_coords, f"interventional search missed the causal coordinate: {causal_coords}"

    verdict(
        6,
        True,
        f"correlated coordinate 3 in the baseline's top 2 ({sorted(wu_top2)}) but absent "
        f"from the interventional selection ({sorted(causal_coords)})",
    )


# ------------------------------------------------------------------ 7 and 10 (shared 32x32 hue pipeline)


@pytest.fixture(scope="module")
def hue_run(tmp_path_factory):
    """Full-resolution hue pipeline: 5,000 images, a >= 0.95 classifier, a
    3,000-step conditioned generator, discovery, explanation, sufficiency,
    and the HTML report."""
    base = tmp_path_factory.mktemp("accept_hue")
    data, heldout = str(base / "data"), str(base / "heldout")
    clf, run_dir = str(base / "clf.pt"), str(base / "run")
    start = time.monotonic()

    run_cli("make-dataset", [
        "make-dataset", "--out", data, "--num-images", "5000", "--resolution", "32",
        "--class-rule", "hue", "--seed", "0",
    ])
    run_cli("make-dataset heldout", [
        "make-dataset", "--out", heldout, "--num-images", "700", "--resolution", "32",
        "--class-rule", "hue", "--seed", "1",
    ])
    run_cli("train-classifier", [
        "train-classifier", "--dataset", data, "--out", clf,
        "--epochs", "6", "--batch-size", "64", "--min-accuracy", "0.95", "--seed", "0",
    ])
    run_cli("train-gan", [
        "train-gan", "--dataset", data, "--classifier", clf, "--run-dir", run_dir,
        "--steps", "3000", "--batch-size", "16", "--lr-g", "1e-3", "--lr-d", "1e-3",
        "--adv-weight", "0.1", "--rec-weight", "10",
        "--layer-channels", "64,64,32,32", "--latent-dim", "64",
        "--checkpoint-every", "100000", "--seed", "0",
    ])
    run_cli("attfind", [
        "attfind", "--run-dir", run_dir, "--dataset", data, "--class", "1",
        "--M", "10", "--t", "1.0", "--alpha", "3", "--max-images", "256",
    ])
    run_cli("eval-sufficiency", [
        "eval-sufficiency", "--run-dir", run_dir, "--dataset", heldout, "--class", "1",
        "--k-max", "10", "--max-images", "256",
    ])

    bundle, _ = load_bundle(os.path.join(run_dir, "gan.pt"))
    ds = load_dataset(heldout)
    replay = bundle.generate_from_styles(bundle.capture_styles(ds.images[:64]))
    preds = np.argmax(np.asarray(bundle.classify(replay)), axis=1)
    counter = np.flatnonzero(preds != 1)[:2]
    explain_args = ["explain", "--run-dir", run_dir, "--dataset", heldout, "--class", "1"]
    for index in counter:
        explain_args += ["--image-index", str(int(index))]
    run_cli("explain", explain_args + ["--strategy", "subset"])

    # The selector-comparison table needs an unconditioned twin this fixture
    # does not train, so a partial report (exit 3) is expected here.
    run_cli("report", ["report", "--run-dir", run_dir], allow=(0, 3))

    return {"base": str(base), "run": run_dir, "clf": clf, "elapsed": time.monotonic() - start}


def test_criterion_7_flip_fraction_on_held_out_images(hue_run):
    """Top-10 discovered attributes flip >= 60% of 256 held-out counter-class
    images on the 32x32 hue task, within the step and wall budgets."""
    with open(hue_run["clf"] + ".manifest.json") as fh:
        accuracy = json.load(fh)["held_out_accuracy"]
    assert accuracy >= 0.95, f"classifier held-out accuracy {accuracy}"

    with open(os.path.join(hue_run["run"], "gan.pt.manifest.json")) as fh:
        steps = json.load(fh)["training_step"]
    assert steps <= 20_000, f"trained {steps} steps"

    with open(os.path.join(hue_run["run"], "tables", "sufficiency.json")) as fh:
        entries = {e["selector"]: e for e in json.load(fh)}
    entry = entries["attfind"]
    assert entry["k_max"] == 10 and entry["num_images"] == 256, entry

    hours = hue_run["elapsed"] / 3600.0
    assert hours < 12.0, f"pipeline took {hours:.2f}h"
    verdict(
        7,
        entry["flip_fraction"] >= 0.60,
        f"flip fraction {entry['flip_fraction']:.4f} over {entry['num_images']} held-out images "
        f"(classifier {accuracy:.4f}, {steps} steps, {hours * 60:.0f} min)",
    )


def test_criterion_10_report_strips_and_tables_resolve(hue_run):
    """The run's HTML report shows one exemplar strip per discovered
    attribute, the sufficiency table, and no broken asset links."""
    report_path = os.path.join(hue_run["run"], "report.html")
    with open(report_path) as fh:
        html = fh.read()

    with open(os.path.join(hue_run["run"], "attributes", "class_1.json")) as fh:
        num_attrs = len(json.load(fh)["attributes"])
    assert num_attrs >= 1

    strip_imgs = re.findall(r'<img[^>]*src="(strips/[^"]+)"', html)
    assert len(strip_imgs) == num_attrs, f"{len(strip_imgs)} strips for {num_attrs} attributes"

    # one row per selector, one flip-fraction column per edit budget
    assert "<th>k=1</th>" in html and "<th>k=10</th>" in html, "sufficiency table missing"
    assert re.search(r'<td class="label">attfind \(class 1, n=256\)</td>', html), "no attfind row"

    srcs = re.findall(r'src="([^"]+)"', html)
    missing = [s for s in srcs if not os.path.exists(os.path.join(hue_run["run"], s))]
    assert srcs, "report embeds no images at all"

    verdict(
        10,
        not missing,
        f"{num_attrs} attribute strips, sufficiency table present, {len(srcs)} asset links "
        f"all resolve ({len(missing)} broken)",
    )


# ------------------------------------------------------------------ 8 (conditioned vs unconditioned, subtle patch)


def _patch_ablation_gap(base, seed: int) -> float:
    """One matched-seed conditioned/unconditioned pair on the subtle-patch
    rule; returns the conditioned-minus-unconditioned flip gap at k <= 10."""
    data, heldout = str(base / "data"), str(base / "heldout")
    clf = str(base / "clf.pt")
    run_cst, run_nocst = str(base / "run_cst"), str(base / "run_nocst")

    run_cli("make-dataset", [
        "make-dataset", "--out", data, "--num-images", "5000", "--resolution", "32",
        "--class-rule", "patch", "--patch-contrast", "0.08", "--seed", str(2 * seed),
    ])
    run_cli("make-dataset heldout", [
        "make-dataset", "--out", heldout, "--num-images", "700", "--resolution", "32",
        "--class-rule", "patch", "--patch-contrast", "0.08", "--seed", str(2 * seed + 1),
    ])
    run_cli("train-classifier", [
        "train-classifier", "--dataset", data, "--out", clf,
        "--epochs", "15", "--min-accuracy", "0.95", "--seed", str(seed),
    ])
    gan_common = [
        "--dataset", data, "--classifier", clf,
        "--steps", "3000", "--batch-size", "16", "--lr-g", "1e-3", "--lr-d", "1e-3",
        "--adv-weight", "0.1", "--rec-weight", "10",
        "--layer-channels", "64,64,32,32", "--latent-dim", "64",
        "--checkpoint-every", "100000", "--seed", str(seed),
    ]
    run_cli("train-gan", ["train-gan", "--run-dir", run_cst] + gan_common)
    run_cli("train-gan --no-cst", ["train-gan", "--run-dir", run_nocst, "--no-cst"] + gan_common)
    run_cli("ablation-compare", [
        "ablation-compare", "--run-dir", run_cst, "--no-cst-run", run_nocst,
        "--dataset", heldout, "--class", "1", "--M", "10", "--t", "1.0",
        "--k-max", "10", "--max-images", "256", "--dataset-name", "shapes-patch",
    ])

    with open(os.path.join(run_cst, "tables", "ablation.json")) as fh:
        table = json.load(fh)
    return float(table["cst_gap"])


@pytest.fixture(scope="module")
def patch_gaps(tmp_path_factory):
    """Gap from the first seed, plus a second seed only if the first misses."""
    gaps = [_patch_ablation_gap(tmp_path_factory.mktemp("accept_patch0"), seed=0)]
    if gaps[0] < 0.15:
        gaps.append(_patch_ablation_gap(tmp_path_factory.mktemp("accept_patch1"), seed=1))
    return gaps


def test_criterion_8_conditioning_gap_on_subtle_patch(patch_gaps):
    """Conditioning on the classifier lifts the flip fraction by >= 0.15 over
    the unconditioned twin on the subtle-patch task (second seed allowed)."""
    best = max(patch_gaps)
    shown = ", ".join(f"{g:+.4f}" for g in patch_gaps)
    verdict(
        8,
        best >= 0.15,
        f"conditioned-minus-unconditioned flip gap {shown} across {len(patch_gaps)} seed pair(s); "
        f"best {best:+.4f} vs required +0.15",
    )


# ------------------------------------------------------------------ 9


def _without_meta(value):
    """Drop provenance stamps so only the measured content is compared."""
    if isinstance(value, dict):
        return {k: _without_meta(v) for k, v in value.items() if k != "_meta"}
    if isinstance(value, list):
        return [_without_meta(v) for v in value]
    return value


def _assert_close_json(a, b, path=""):
    assert type(a) is type(b), f"{path}: {type(a).__name__} vs {type(b).__name__}"
    if isinstance(a, dict):
        assert a.keys() == b.keys(), f"{path}: keys {sorted(a)} vs {sorted(b)}"
        for key in a:
            _assert_close_json(a[key], b[key], f"{path}.{key}")
    elif isinstance(a, list):
        assert len(a) == len(b), f"{path}: lengths {len(a)} vs {len(b)}"
        for i, (x, y) in enumerate(zip(a, b)):
            _assert_close_json(x, y, f"{path}[{i}]")
    elif isinstance(a, float):
        assert abs(a - b) <= 1e-4, f"{path}: {a} vs {b}"
    else:
        assert a == b, f"{path}: {a} vs {b}"


def test_criterion_9_same_seed_reruns_agree(tmp_path):
    """Two full pipeline runs from one seed produce matching attribute and
    sufficiency JSON, floats within 1e-4."""
    first = run_tiny_pipeline(tmp_path / "a")
    second = run_tiny_pipeline(tmp_path / "b")

    compared = []
    for rel in (
        os.path.join("attributes", "class_1.json"),
        os.path.join("attributes", "class_1_wu.json"),
        os.path.join("tables", "sufficiency.json"),
    ):
        with open(os.path.join(first["run_cst"], rel)) as fh:
            a = _without_meta(json.load(fh))
        with open(os.path.join(second["run_cst"], rel)) as fh:
            b = _without_meta(json.load(fh))
        _assert_close_json(a, b, rel)
        compared.append(rel)

    verdict(
        9,
        True,
        f"seeded reruns agree on {', '.join(os.path.basename(p) for p in compared)} within 1e-4",
    )
