"""Shared fixtures: one tiny end-to-end pipeline reused by the CLI tests."""

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from counterstyle.cli import main
from counterstyle.models import load_bundle
from counterstyle.worlds import load_dataset


def run_cli(argv: list[str]) -> int:
    return main(argv)


def run_tiny_pipeline(base) -> dict:
    """Run every subcommand once on a 16x16 dataset and tiny models.

    Returns the directory layout plus the image index used for the
    explanation, so callers can assert on the artifacts without re-running
    anything.
    """
    data = str(base / "data")
    clf = str(base / "clf.pt")
    run_cst = str(base / "run_cst")
    run_nocst = str(base / "run_nocst")

    def check(step: str, argv: list[str]) -> None:
        code = main(argv)
        assert code == 0, f"{step} exited {code}"

    check("make-dataset", [
        "make-dataset", "--out", data, "--num-images", "120", "--resolution", "16",
        "--class-rule", "hue", "--seed", "0",
    ])
    check("train-classifier", [
        "train-classifier", "--dataset", data, "--out", clf,
        "--epochs", "3", "--min-accuracy", "0.8", "--seed", "0",
    ])
    gan_common = [
        "--dataset", data, "--classifier", clf,
        "--steps", "30", "--batch-size", "8", "--lr-g", "1e-3", "--lr-d", "1e-3",
        "--adv-weight", "0.1", "--rec-weight", "10",
        "--layer-channels", "16,8,8", "--latent-dim", "16",
        "--checkpoint-every", "1000", "--stats-images", "120", "--seed", "0",
    ]
    check("train-gan", ["train-gan", "--run-dir", run_cst] + gan_common)
    check("train-gan --no-cst", ["train-gan", "--run-dir", run_nocst, "--no-cst"] + gan_common)

    check("attfind", [
        "attfind", "--run-dir", run_cst, "--dataset", data, "--class", "1",
        "--M", "4", "--t", "1.0", "--alpha", "3", "--max-images", "64", "--strip-count", "3",
    ])
    check("baseline-wu", [
        "baseline-wu", "--run-dir", run_cst, "--dataset", data, "--class", "1",
        "--M", "4", "--max-images", "120",
    ])

    bundle, _ = load_bundle(f"{run_cst}/gan.pt")
    ds = load_dataset(data)
    replay = bundle.generate_from_styles(bundle.capture_styles(ds.images))
    preds = np.argmax(np.asarray(bundle.classify(replay)), axis=1)
    explain_index = int(np.nonzero(preds != 1)[0][0])
    check("explain", [
        "explain", "--run-dir", run_cst, "--dataset", data, "--class", "1",
        "--image-index", str(explain_index), "--strategy", "subset",
    ])

    for selector in ("attfind", "wu"):
        check(f"eval-sufficiency {selector}", [
            "eval-sufficiency", "--run-dir", run_cst, "--dataset", data, "--class", "1",
            "--k-max", "3", "--selector", selector, "--max-images", "32",
        ])
    check("ablation-compare", [
        "ablation-compare", "--run-dir", run_cst, "--no-cst-run", run_nocst,
        "--dataset", data, "--class", "1", "--M", "4", "--k-max", "3",
        "--max-images", "32", "--dataset-name", "tiny",
    ])
    check("report", ["report", "--run-dir", run_cst])

    return {
        "base": str(base),
        "data": data,
        "classifier": clf,
        "run_cst": run_cst,
        "run_nocst": run_nocst,
        "explain_index": explain_index,
        "num_images": 120,
    }


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    return run_tiny_pipeline(tmp_path_factory.mktemp("pipeline"))
