"""Network bundle: shape contract, style capture, replay and checkpoint fidelity."""

import numpy as np
import pytest
import torch

from counterstyle.core import StyleModel, StyleVectorSet
from counterstyle.models import (
    BUNDLE_FORMAT_VERSION,
    ConditionVector,
    ConvClassifier,
    GeneratorSpec,
    ModelBundle,
    load_bundle,
    load_classifier,
    manifest_path_for,
    parameter_hash,
    save_bundle,
    save_classifier,
)

SPEC16 = GeneratorSpec(image_resolution=16, layer_channels=(16, 8, 8), latent_dim=16, num_classes=2)


@pytest.fixture(scope="module")
def bundle16():
    classifier = ConvClassifier(16, 2, base_channels=8, max_channels=16)
    return ModelBundle.create(SPEC16, classifier, seed=0)


@pytest.fixture(scope="module")
def images16():
    rng = np.random.default_rng(0)
    return rng.uniform(-1, 1, size=(6, 3, 16, 16)).astype(np.float32)


class TestGeneratorSpec:
    def test_k_sums_layer_widths(self):
        assert SPEC16.k == 32

    def test_layer_count_must_match_resolution(self):
        with pytest.raises(ValueError, match="style layers"):
            GeneratorSpec(image_resolution=16, layer_channels=(16, 8), latent_dim=16)
        GeneratorSpec(image_resolution=4, layer_channels=(8,), latent_dim=8)  # 4x4 is one layer

    def test_resolution_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            GeneratorSpec(image_resolution=12, layer_channels=(8, 8), latent_dim=8)
        with pytest.raises(ValueError):
            GeneratorSpec(image_resolution=2, layer_channels=(8,), latent_dim=8)

    def test_latent_and_classes_validated(self):
        with pytest.raises(ValueError):
            GeneratorSpec(image_resolution=16, layer_channels=(8, 8, 8), latent_dim=0)
        with pytest.raises(ValueError):
            GeneratorSpec(image_resolution=16, layer_channels=(8, 8, 8), latent_dim=8, num_classes=1)

    def test_json_round_trip(self):
        assert GeneratorSpec.from_json_dict(SPEC16.to_json_dict()) == SPEC16


class TestConditionVector:
    def test_valid_simplex_accepted(self):
        cv = ConditionVector(np.array([0.25, 0.75]))
        np.testing.assert_array_equal(cv.class_probabilities, [0.25, 0.75])

    def test_invalid_rows_rejected(self):
        with pytest.raises(ValueError):
            ConditionVector(np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            ConditionVector(np.array([-0.1, 1.1]))
        with pytest.raises(ValueError):
            ConditionVector(np.array([1.0]))


class TestBundleSurface:
    def test_satisfies_style_model_protocol(self, bundle16):
        assert isinstance(bundle16, StyleModel)
        assert bundle16.layer_channels == (16, 8, 8)
        assert bundle16.num_classes == 2

    def test_capture_matches_manual_affine_heads(self, bundle16, images16):
        captured = bundle16.capture_styles(images16)
        x = torch.from_numpy(images16)
        with torch.no_grad():
            w = bundle16.encoder(x)
            cond = torch.softmax(bundle16.classifier(x), dim=1)
            manual = bundle16.generator.styles(w, cond).numpy()
        np.testing.assert_allclose(captured, manual, atol=1e-5)

    def test_replay_equals_full_forward(self, bundle16, images16):
        replay = bundle16.generate_from_styles(bundle16.capture_styles(images16))
        x = torch.from_numpy(images16)
        with torch.no_grad():
            w = bundle16.encoder(x)
            cond = torch.softmax(bundle16.classifier(x), dim=1)
            full, _ = bundle16.generator(w, cond)
        np.testing.assert_allclose(replay, full.numpy(), atol=1e-5)

    def test_classify_is_deterministic(self, bundle16, images16):
        a = bundle16.classify(images16)
        b = bundle16.classify(images16)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (6, 2)

    def test_condition_shifts_styles_when_enabled(self, bundle16):
        w = np.zeros(SPEC16.latent_dim, dtype=np.float64)
        _, styles_a = bundle16.generate(w, np.array([1.0, 0.0]))
        _, styles_b = bundle16.generate(w, np.array([0.0, 1.0]))
        assert np.abs(styles_a - styles_b).max() > 1e-6

    def test_disabled_conditioning_uses_zero_rows(self, images16):
        classifier = ConvClassifier(16, 2, base_channels=8, max_channels=16)
        plain = ModelBundle.create(SPEC16, classifier, seed=0, cst_enabled=False)
        np.testing.assert_array_equal(plain.condition_for(images16), np.zeros((6, 2)))
        captured = plain.capture_styles(images16)
        x = torch.from_numpy(images16)
        with torch.no_grad():
            manual = plain.generator.styles(plain.encoder(x), torch.zeros(6, 2)).numpy()
        np.testing.assert_allclose(captured, manual, atol=1e-5)

    def test_zero_condition_blocks_gradient_into_condition_columns(self, bundle16):
        generator = bundle16.generator
        generator.zero_grad(set_to_none=True)
        w = torch.randn(2, SPEC16.latent_dim)
        images, _ = generator(w, torch.zeros(2, 2))
        images.sum().backward()
        for affine in generator.affines:
            cond_cols = affine.weight.grad[:, SPEC16.latent_dim :]
            assert torch.all(cond_cols == 0)
        generator.zero_grad(set_to_none=True)
        images, _ = generator(w, torch.full((2, 2), 0.5))
        images.sum().backward()
        any_nonzero = any(
            affine.weight.grad[:, SPEC16.latent_dim :].abs().max().item() > 0
            for affine in generator.affines
        )
        assert any_nonzero
        generator.zero_grad(set_to_none=True)

    def test_classifier_frozen_and_drift_detectable(self, images16):
        classifier = ConvClassifier(16, 2, base_channels=8, max_channels=16)
        bundle = ModelBundle.create(SPEC16, classifier, seed=0)
        assert all(not p.requires_grad for p in bundle.classifier.parameters())
        assert bundle.verify_classifier_frozen()
        with torch.no_grad():
            bundle.classifier.head.weight += 0.5
        assert not bundle.verify_classifier_frozen()

    def test_style_vector_set_accepted_for_synthesis(self, bundle16, images16):
        row = bundle16.capture_styles(images16[:1])[0]
        styles = StyleVectorSet.from_flat(row, SPEC16.layer_channels)
        from_set = bundle16.generate_from_styles(styles)
        from_row = bundle16.generate_from_styles(row[None])
        np.testing.assert_array_equal(from_set, from_row)

    def test_input_validation(self, bundle16, images16):
        with pytest.raises(ValueError, match="expected images"):
            bundle16.classify(np.zeros((2, 3, 8, 8), dtype=np.float32))
        with pytest.raises(ValueError, match="pixel values"):
            bundle16.classify(np.full((1, 3, 16, 16), 3.0, dtype=np.float32))
        with pytest.raises(ValueError, match="styles"):
            bundle16.generate_from_styles(np.zeros((1, 7)))
        with pytest.raises(ValueError, match="probability"):
            bundle16.generate(np.zeros(16), np.array([0.7, 0.7]))

    def test_create_rejects_mismatched_classifier(self):
        with pytest.raises(ValueError, match="classes"):
            ModelBundle.create(SPEC16, ConvClassifier(16, 3, base_channels=8), seed=0)
        with pytest.raises(ValueError, match="resolution"):
            ModelBundle.create(SPEC16, ConvClassifier(32, 2, base_channels=8), seed=0)


class TestCheckpointIO:
    def test_bundle_round_trip_is_exact(self, bundle16, images16, tmp_path):
        bundle16.training_step = 7
        blob = str(tmp_path / "gan.pt")
        save_bundle(bundle16, blob, manifest_extra={"seed": 0})
        loaded, manifest = load_bundle(blob)
        for name in ("generator", "encoder", "discriminator", "classifier"):
            assert parameter_hash(getattr(loaded, name)) == parameter_hash(getattr(bundle16, name))
        assert loaded.training_step == 7
        assert loaded.cst_enabled == bundle16.cst_enabled
        assert manifest["seed"] == 0
        assert manifest["spec"] == SPEC16.to_json_dict()
        styles = bundle16.capture_styles(images16)
        np.testing.assert_array_equal(
            loaded.generate_from_styles(styles), bundle16.generate_from_styles(styles)
        )
        np.testing.assert_array_equal(loaded.classify(images16), bundle16.classify(images16))

    def test_manifest_written_next_to_blob(self, bundle16, tmp_path):
        blob = str(tmp_path / "gan.pt")
        save_bundle(bundle16, blob)
        assert manifest_path_for(blob) == blob + ".manifest.json"
        import os

        assert os.path.exists(blob + ".manifest.json")

    def test_unknown_format_version_rejected(self, bundle16, tmp_path):
        blob = str(tmp_path / "gan.pt")
        save_bundle(bundle16, blob)
        payload = torch.load(blob, weights_only=True)
        payload["format_version"] = BUNDLE_FORMAT_VERSION + 1
        torch.save(payload, blob)
        with pytest.raises(ValueError, match="format"):
            load_bundle(blob)

    def test_classifier_round_trip_keeps_architecture(self, tmp_path):
        classifier = ConvClassifier(16, 2, base_channels=8, max_channels=16)
        path = str(tmp_path / "clf.pt")
        save_classifier(classifier, path, meta={"held_out_accuracy": 0.97})
        loaded, meta = load_classifier(path)
        assert parameter_hash(loaded) == parameter_hash(classifier)
        assert loaded.base_channels == 8 and loaded.max_channels == 16
        assert meta["held_out_accuracy"] == 0.97
        x = torch.randn(2, 3, 16, 16)
        with torch.no_grad():
            np.testing.assert_array_equal(loaded(x).numpy(), classifier(x).numpy())
