"""Ensemble construction, training, aggregation, decision, persistence."""

import numpy as np
import numpy.testing as npt
import pytest

from wdpipe.data import CLASS_NAMES, Dataset, Sample, synth_generate
from wdpipe.ensemble import (
    ArchitectureDescriptor,
    Ensemble,
    EnsembleWeaponDetector,
    decide,
    default_architectures,
    deserialize_ensemble,
    detect,
    init_ensemble,
    mean_aggregate,
    predict_proba,
    serialize_ensemble,
    train_base_model,
    train_ensemble,
)
from wdpipe.errors import ModelFormatError, ShapeError
from wdpipe.nn.network import TrainConfig, conv, dense, flatten, relu_spec, softmax_output
from wdpipe.partition import make_partition
from wdpipe.preprocess import preprocess_dataset, train_test_split


def tiny_training_set(n=30, canvas=16, seed=0):
    raw = synth_generate(n, [1 / 3, 1 / 3, 1 / 3], canvas=canvas, seed=seed)
    return preprocess_dataset(raw, canvas)


TINY_CONFIG = TrainConfig(epochs=2, batch_size=8, learning_rate=0.05, seed=11)


class TestArchitectureDescriptor:
    def test_hidden_layer_cap_enforced(self):
        too_deep = (
            conv(4, 3, 1, 1), relu_spec(), conv(4, 3, 1, 1), relu_spec(),
            conv(4, 3, 1, 1), relu_spec(), flatten(), dense(3), softmax_output(),
        )
        with pytest.raises(ShapeError):
            ArchitectureDescriptor(name="too-deep", layers=too_deep)

    def test_must_end_with_dense_softmax(self):
        with pytest.raises(ShapeError):
            ArchitectureDescriptor(name="no-softmax", layers=(flatten(), dense(3)))

    def test_dict_roundtrip(self):
        original = default_architectures(3)[1]
        back = ArchitectureDescriptor.from_dict(original.to_dict())
        assert back == original


class TestDefaultArchitectures:
    def test_single(self):
        descriptors = default_architectures(1)
        assert len(descriptors) == 1
        assert descriptors[0].hidden_layer_count <= 7

    def test_five_are_pairwise_distinct(self):
        descriptors = default_architectures(5)
        assert len(descriptors) == 5
        layer_lists = [d.layers for d in descriptors]
        assert len(set(layer_lists)) == 5
        names = [d.name for d in descriptors]
        assert len(set(names)) == 5
        for d in descriptors:
            assert d.hidden_layer_count <= 7

    def test_catalog_bound(self):
        with pytest.raises(ValueError):
            default_architectures(9)

    def test_whole_catalog_capped(self):
        for d in default_architectures(8):
            assert d.hidden_layer_count <= 7
            assert d.num_classes == len(CLASS_NAMES)


class TestTrainBaseModel:
    def test_tiny_learning_rate_roughly_keeps_init(self):
        samples = tiny_training_set()
        descriptor = default_architectures(1, input_size=16)[0]
        cfg = TrainConfig(epochs=1, batch_size=8, learning_rate=1e-300, seed=4)
        model = train_base_model(descriptor, samples, cfg)
        from wdpipe.nn.network import Network

        fresh = Network(descriptor.layers, (1, 16, 16), seed=4)
        for a, b in zip(model.network.parameter_arrays(), fresh.parameter_arrays()):
            npt.assert_allclose(a, b, atol=1e-290)

    def test_memorizes_single_sample(self):
        raw = synth_generate(1, [0.0, 1.0, 0.0], canvas=16, seed=5)
        samples = preprocess_dataset(raw, 16)
        descriptor = default_architectures(1, input_size=16)[0]
        cfg = TrainConfig(epochs=150, batch_size=1, learning_rate=0.2, seed=3)
        model = train_base_model(descriptor, samples, cfg)
        assert model.train_meta.final_loss < 0.01

    def test_same_seed_is_bit_identical(self):
        samples = tiny_training_set()
        descriptor = default_architectures(1, input_size=16)[0]
        models = [train_base_model(descriptor, samples, TINY_CONFIG) for _ in range(2)]
        for a, b in zip(
            models[0].network.parameter_arrays(), models[1].network.parameter_arrays()
        ):
            npt.assert_array_equal(a, b)


class TestTrainEnsemble:
    def test_single_learner_equals_base_model(self):
        samples = tiny_training_set()
        plan = make_partition(samples, x=1, m=0, rho=0.0, seed=1)
        descriptors = default_architectures(1, input_size=16)
        ensemble = train_ensemble(plan, descriptors, samples, TINY_CONFIG)
        from wdpipe.partition import learner_training_set

        solo = train_base_model(descriptors[0], learner_training_set(plan, 0, samples), TINY_CONFIG)
        for a, b in zip(
            ensemble.models[0].network.parameter_arrays(), solo.network.parameter_arrays()
        ):
            npt.assert_array_equal(a, b)

    def test_serial_and_parallel_are_byte_identical(self):
        samples = tiny_training_set(n=40)
        plan = make_partition(samples, x=4, m=1, rho=0.1, seed=2)
        descriptors = default_architectures(4, input_size=16)
        serial = train_ensemble(plan, descriptors, samples, TINY_CONFIG, max_workers=None)
        parallel = train_ensemble(plan, descriptors, samples, TINY_CONFIG, max_workers=4)
        assert serialize_ensemble(serial) == serialize_ensemble(parallel)

    def test_five_models_have_distinct_parameters(self):
        samples = tiny_training_set(n=50)
        plan = make_partition(samples, x=5, m=1, rho=0.1, seed=3)
        descriptors = default_architectures(5, input_size=16)
        ensemble = train_ensemble(plan, descriptors, samples, TINY_CONFIG)
        buffers = [serialize_model_params(m) for m in ensemble.models]
        assert len(set(buffers)) == 5

    def test_descriptor_count_mismatch_raises(self):
        samples = tiny_training_set()
        plan = make_partition(samples, x=2, m=0, rho=0.0, seed=0)
        with pytest.raises(ValueError):
            train_ensemble(plan, default_architectures(3, input_size=16), samples, TINY_CONFIG)


def serialize_model_params(model):
    return b"".join(arr.tobytes() for arr in model.network.parameter_arrays())


class TestAggregation:
    def test_direct_mean(self):
        out = mean_aggregate([[0.2, 0.8], [0.4, 0.6]])
        npt.assert_allclose(out, [0.3, 0.7], atol=1e-15)

    def test_single_model_identity(self):
        ensemble = init_ensemble(default_architectures(1, input_size=16), input_size=16, seed=0)
        x = np.random.default_rng(0).uniform(0, 1, (1, 16, 16))
        npt.assert_array_equal(
            predict_proba(ensemble, x), ensemble.models[0].network.predict_proba(x)
        )

    def test_mean_of_identical_rows(self):
        row = np.array([0.5, 0.2, 0.3])
        npt.assert_allclose(mean_aggregate([row] * 5), row, atol=1e-12)

    def test_matches_naive_loop_and_permutation_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            k = int(rng.integers(1, 8))
            c = int(rng.integers(2, 6))
            raw = rng.uniform(0, 1, (k, c)) + 1e-9
            rows = raw / raw.sum(axis=1, keepdims=True)
            out = mean_aggregate(rows)
            naive = np.zeros(c)
            for row in rows:
                naive += row
            naive /= k
            npt.assert_allclose(out, naive, atol=1e-12)
            perm = rng.permutation(k)
            npt.assert_allclose(out, mean_aggregate(rows[perm]), atol=1e-12)

    def test_aggregation_bounds(self):
        ensemble = init_ensemble(default_architectures(5, input_size=16), input_size=16, seed=1)
        rng = np.random.default_rng(7)
        for _ in range(10):
            x = rng.uniform(0, 1, (1, 16, 16))
            per_model = np.stack([m.network.predict_proba(x) for m in ensemble.models])
            agg = predict_proba(ensemble, x)
            assert np.all(agg >= per_model.min(axis=0) - 1e-15)
            assert np.all(agg <= per_model.max(axis=0) + 1e-15)
            assert abs(agg.sum() - 1.0) <= 1e-9

    def test_model_permutation_invariance(self):
        ensemble = init_ensemble(default_architectures(4, input_size=16), input_size=16, seed=2)
        x = np.random.default_rng(8).uniform(0, 1, (1, 16, 16))
        base = predict_proba(ensemble, x)
        reordered = Ensemble(
            models=list(reversed(ensemble.models)),
            class_names=ensemble.class_names,
            input_size=ensemble.input_size,
        )
        npt.assert_allclose(predict_proba(reordered, x), base, atol=1e-12)


class TestDecide:
    def test_confident_none(self):
        result = decide(np.array([0.9, 0.05, 0.05]), CLASS_NAMES)
        assert (result.weapon_present, result.predicted_class, result.confidence) == (
            False,
            "none",
            0.9,
        )

    def test_gun_detection(self):
        result = decide(np.array([0.2, 0.5, 0.3]), CLASS_NAMES)
        assert (result.weapon_present, result.predicted_class, result.confidence) == (
            True,
            "gun",
            0.5,
        )

    def test_exact_tie_goes_to_lowest_index(self):
        result = decide(np.array([0.4, 0.4, 0.2]), CLASS_NAMES)
        assert result.predicted_class == "none"
        assert not result.weapon_present


class TestDetect:
    def test_detect_runs_on_raw_frame(self):
        ensemble = init_ensemble(default_architectures(3), input_size=32, seed=3)
        frame = synth_generate(1, [0, 1, 0], canvas=48, seed=9).samples[0].image
        result = detect(ensemble, frame)
        assert result.predicted_class in CLASS_NAMES
        assert 0.0 <= result.confidence <= 1.0


class TestPersistence:
    def build(self):
        samples = tiny_training_set(n=24)
        plan = make_partition(samples, x=2, m=1, rho=0.1, seed=5)
        return train_ensemble(plan, default_architectures(2, input_size=16), samples, TINY_CONFIG)

    def test_roundtrip_predictions_bitwise_equal(self, tmp_path):
        ensemble = self.build()
        blob = serialize_ensemble(ensemble)
        back = deserialize_ensemble(blob)
        rng = np.random.default_rng(10)
        for _ in range(5):
            x = rng.uniform(0, 1, (1, 16, 16))
            npt.assert_array_equal(predict_proba(ensemble, x), predict_proba(back, x))

    def test_file_size_formula(self):
        ensemble = self.build()
        blob = serialize_ensemble(ensemble)
        import json
        import struct

        header_len = struct.unpack("<Q", blob[8:16])[0]
        total_params = sum(m.network.parameter_count() for m in ensemble.models)
        assert len(blob) == 16 + header_len + 8 * total_params
        header = json.loads(blob[16 : 16 + header_len])
        assert header["n"] == 2
        assert header["class_names"] == list(CLASS_NAMES)

    def test_bad_magic(self):
        ensemble = self.build()
        blob = bytearray(serialize_ensemble(ensemble))
        blob[:4] = b"NOPE"
        with pytest.raises(ModelFormatError, match="bad magic"):
            deserialize_ensemble(bytes(blob))

    def test_unsupported_version(self):
        ensemble = self.build()
        blob = bytearray(serialize_ensemble(ensemble))
        blob[4:8] = (99).to_bytes(4, "little")
        with pytest.raises(ModelFormatError, match="version"):
            deserialize_ensemble(bytes(blob))

    def test_truncated_blob(self):
        ensemble = self.build()
        blob = serialize_ensemble(ensemble)
        with pytest.raises(ModelFormatError, match="truncat"):
            deserialize_ensemble(blob[:-20])

    def test_trailing_garbage(self):
        ensemble = self.build()
        with pytest.raises(ModelFormatError, match="trailing"):
            deserialize_ensemble(serialize_ensemble(ensemble) + b"\x00")


class TestEnsembleInvariants:
    def test_duplicate_descriptor_rejected(self):
        descriptors = default_architectures(2, input_size=16)
        ensemble = init_ensemble(descriptors, input_size=16, seed=0)
        with pytest.raises(ValueError):
            Ensemble(
                models=[ensemble.models[0], ensemble.models[0]],
                class_names=CLASS_NAMES,
                input_size=16,
            )

    def test_all_constructed_models_obey_layer_cap(self):
        ensemble = init_ensemble(default_architectures(5), input_size=32, seed=1)
        for model in ensemble.models:
            assert model.descriptor.hidden_layer_count <= 7


class TestEstimatorFacade:
    def test_fit_predict_cycle(self):
        raw = synth_generate(60, [1 / 3, 1 / 3, 1 / 3], canvas=16, seed=12)
        frames = [s.image for s in raw]
        labels = [s.label for s in raw]
        detector = EnsembleWeaponDetector(
            n_models=2, input_size=16, epochs=2, batch_size=8, learning_rate=0.05, seed=0
        )
        detector.fit(frames, labels)
        probs = detector.predict_proba(frames[:5])
        assert probs.shape == (5, 3)
        npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        preds = detector.predict(frames[:5])
        assert preds.shape == (5,)
        assert set(preds) <= {0, 1, 2}

    def test_get_params_lists_constructor_args(self):
        detector = EnsembleWeaponDetector(n_models=3, epochs=7)
        params = detector.get_params()
        assert params["n_models"] == 3 and params["epochs"] == 7

    def test_unfitted_predict_raises(self):
        with pytest.raises(ValueError, match="not fitted"):
            EnsembleWeaponDetector().predict_proba([np.zeros((1, 16, 16))])

    def test_score_uses_accuracy(self):
        raw = synth_generate(40, [1 / 3, 1 / 3, 1 / 3], canvas=16, seed=13)
        frames = [s.image for s in raw]
        labels = np.array([s.label for s in raw])
        detector = EnsembleWeaponDetector(
            n_models=2, input_size=16, epochs=1, batch_size=8, learning_rate=0.05, seed=1
        )
        detector.fit(frames, labels)
        score = detector.score(frames, labels)
        assert 0.0 <= score <= 1.0
