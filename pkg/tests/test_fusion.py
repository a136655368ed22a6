"""Fusion tests: the four fusers, their invariants, persistence, alignment."""

import numpy as np
import pytest

from bandcm.corpus import default_scenario_spec, synth_scenario
from bandcm.errors import DataError, TrainingError
from bandcm.fusion import (
    KIND_GMM,
    KIND_LINEAR,
    KIND_MULTINOMIAL,
    KIND_SVM,
    LogisticOptions,
    ScoreVectorSet,
    Standardizer,
    SvmDiagnostics,
    SvmOptions,
    fuse,
    fused_rows,
    load_fusion_model,
    save_fusion_model,
    score_vectors_from_files,
    train_gmm_fusion,
    train_linear_fusion,
    train_multinomial_fusion,
    train_svm_poly,
)
from bandcm.gmm import EmOptions
from bandcm.metrics import LabeledScores, eer, write_score_file


def make_set(vectors, keys, attack_ids=None, prefix="u"):
    vectors = np.atleast_2d(np.asarray(vectors, float))
    n = vectors.shape[0]
    if attack_ids is None:
        attack_ids = ["-" if k == "bonafide" else "A01" for k in keys]
    return ScoreVectorSet(
        [f"{prefix}{i:04d}" for i in range(n)], list(attack_ids), list(keys), vectors
    )


def two_blob_set(seed=0, n=120, gap=3.0, dims=2):
    rng = np.random.default_rng(seed)
    bona = rng.normal(gap / 2, 0.5, size=(n, dims))
    spoof = rng.normal(-gap / 2, 0.5, size=(n, dims))
    vectors = np.vstack([bona, spoof])
    keys = ["bonafide"] * n + ["spoof"] * n
    return make_set(vectors, keys)


def training_eer(model, svs):
    scores = fuse(model, svs)
    mask = svs.bona_mask()
    return eer(LabeledScores(scores[mask], scores[~mask]))


class TestLinearFusion:
    def test_1d_well_ordered_gives_positive_weight(self):
        rng = np.random.default_rng(0)
        vectors = np.concatenate([rng.normal(2, 1, 80), rng.normal(-2, 1, 80)])[:, None]
        keys = ["bonafide"] * 80 + ["spoof"] * 80
        model = train_linear_fusion(make_set(vectors, keys))
        assert model.weights[0] > 0

    def test_duplicated_column_keeps_ordering(self):
        svs1 = two_blob_set(seed=1, dims=1)
        svs2 = make_set(np.hstack([svs1.vectors, svs1.vectors]), svs1.keys)
        order1 = np.argsort(fuse(train_linear_fusion(svs1), svs1))
        order2 = np.argsort(fuse(train_linear_fusion(svs2), svs2))
        assert np.array_equal(order1, order2)

    def test_class_symmetry_negates_scores(self):
        svs = two_blob_set(seed=2)
        flipped = make_set(
            -svs.vectors,
            ["bonafide" if k == "spoof" else "spoof" for k in svs.keys],
        )
        direct = fuse(train_linear_fusion(svs), svs)
        mirrored = fuse(train_linear_fusion(flipped), flipped)
        assert np.allclose(direct, -mirrored, atol=1e-6)

    def test_rescaled_refit_keeps_ranking(self):
        # overlapping classes keep the optimum interior, where the tiny
        # ridge term does not disturb the affine equivariance of the loss
        svs = two_blob_set(seed=3, gap=1.0)
        scale = np.array([8.0, 0.25])
        shifted = make_set(svs.vectors * scale + np.array([3.0, -1.0]), svs.keys)
        s1 = fuse(train_linear_fusion(svs), svs)
        s2 = fuse(train_linear_fusion(shifted), shifted)
        # s2 must be monotone in s1 up to convergence-level noise
        resorted = s2[np.argsort(s1)]
        spread = s2.max() - s2.min()
        assert np.all(np.diff(resorted) >= -1e-6 * spread)

    def test_single_class_rejected(self):
        vectors = np.zeros((10, 2))
        with pytest.raises(TrainingError):
            train_linear_fusion(make_set(vectors, ["bonafide"] * 10))


class TestMultinomialFusion:
    def test_two_classes_match_binary_ordering(self):
        svs = two_blob_set(seed=4, dims=1)
        multi = train_multinomial_fusion(svs)
        binary = train_linear_fusion(svs)
        assert np.array_equal(
            np.argsort(fuse(multi, svs)), np.argsort(fuse(binary, svs))
        )

    def test_permuting_attack_labels_is_neutral(self):
        rng = np.random.default_rng(5)
        vectors = np.vstack([
            rng.normal((2, 2), 0.4, size=(60, 2)),
            rng.normal((-2, 1), 0.4, size=(40, 2)),
            rng.normal((1, -2), 0.4, size=(40, 2)),
        ])
        keys = ["bonafide"] * 60 + ["spoof"] * 80
        attacks = ["-"] * 60 + ["A01"] * 40 + ["A02"] * 40
        base = make_set(vectors, keys, attacks)
        renamed = make_set(
            vectors, keys, ["-"] * 60 + ["A02"] * 40 + ["A01"] * 40
        )
        s1 = fuse(train_multinomial_fusion(base), base)
        s2 = fuse(train_multinomial_fusion(renamed), renamed)
        assert np.allclose(s1, s2, atol=1e-4)

    def test_separable_clusters_reach_full_training_accuracy(self):
        svs = two_blob_set(seed=6, gap=6.0)
        model = train_multinomial_fusion(svs)
        scores = fuse(model, svs)
        assert np.all((scores > 0) == svs.bona_mask())

    def test_missing_class_rejected(self):
        svs = two_blob_set(seed=7)
        with pytest.raises(TrainingError):
            train_multinomial_fusion(
                make_set(svs.vectors[: len(svs.keys) // 2],
                         svs.keys[: len(svs.keys) // 2])
            )


class TestGmmFusion:
    def test_identical_class_data_scores_near_zero(self):
        rng = np.random.default_rng(8)
        shared = rng.normal(size=(50, 2))
        vectors = np.vstack([shared, shared])
        keys = ["bonafide"] * 50 + ["spoof"] * 50
        model = train_gmm_fusion(make_set(vectors, keys), k=1)
        scores = fuse(model, make_set(rng.normal(size=(30, 2)), ["spoof"] * 30))
        assert np.max(np.abs(scores)) < 1e-8

    def test_scenario_cluster_signs(self):
        spec = default_scenario_spec(seed=0)
        train = synth_scenario(spec, "train")
        model = train_gmm_fusion(train, k=6, em_options=EmOptions(seed=0))
        scores = fuse(model, train)
        mask = train.bona_mask()
        assert scores[mask].mean() > 0
        for attack in ("A1", "A2", "A3"):
            rows = [i for i, a in enumerate(train.attack_ids) if a == attack]
            assert scores[rows].mean() < 0

    def test_k1_matches_closed_form_gaussian_llr(self):
        rng = np.random.default_rng(9)
        svs = two_blob_set(seed=9, n=200)
        model = train_gmm_fusion(svs, k=1, em_options=EmOptions(seed=4))
        probe = make_set(rng.normal(size=(40, 2)), ["spoof"] * 40)
        got = fuse(model, probe)

        z_train = model.standardizer.apply(svs.vectors)
        z_probe = model.standardizer.apply(probe.vectors)
        mask = svs.bona_mask()

        def log_gauss(z, mean, var):
            return -0.5 * np.sum(np.log(2 * np.pi * var) + (z - mean) ** 2 / var, axis=1)

        want = log_gauss(z_probe, z_train[mask].mean(0), z_train[mask].var(0)) - \
            log_gauss(z_probe, z_train[~mask].mean(0), z_train[~mask].var(0))
        assert np.allclose(got, want, atol=1e-8)


class TestSvmFusion:
    def test_separable_zero_training_errors(self):
        svs = two_blob_set(seed=10, gap=5.0)
        model = train_svm_poly(svs)
        scores = fuse(model, svs)
        assert np.all((scores > 0) == svs.bona_mask())

    def test_kkt_conditions(self):
        svs = two_blob_set(seed=11, gap=2.0)
        diag = SvmDiagnostics()
        options = SvmOptions()
        model = train_svm_poly(svs, options, diagnostics=diag)
        assert np.all(diag.alpha >= -1e-12)
        assert np.all(diag.alpha <= options.c + 1e-12)
        assert abs(np.sum(diag.alpha * diag.labels)) < 1e-8
        assert abs(np.sum(model.dual_coef)) < 1e-8
        assert diag.kkt_residuals(options.c).max() <= options.tol

    def test_beats_linear_on_xor_scenario(self):
        train = synth_scenario(default_scenario_spec(seed=0), "train")
        svm_eer = training_eer(train_svm_poly(train), train)
        linear_eer = training_eer(train_linear_fusion(train), train)
        assert svm_eer < linear_eer

    def test_degree_validation(self):
        svs = two_blob_set(seed=12)
        with pytest.raises(Exception):
            train_svm_poly(svs, SvmOptions(degree=0))


class TestFuseAndPersistence:
    def test_linear_zero_vector_gives_bias(self):
        svs = two_blob_set(seed=13)
        model = train_linear_fusion(svs)
        probe = make_set(np.zeros((3, 2)), ["spoof"] * 3)
        assert np.allclose(fuse(model, probe), model.bias)

    def test_gmm_swap_negates(self):
        from bandcm.fusion import GmmFusion

        svs = two_blob_set(seed=14)
        model = train_gmm_fusion(svs, k=2, em_options=EmOptions(seed=1))
        swapped = GmmFusion(model.spoof, model.bona, model.standardizer)
        probe = make_set(np.random.default_rng(3).normal(size=(20, 2)), ["spoof"] * 20)
        assert np.allclose(fuse(model, probe), -fuse(swapped, probe), atol=1e-12)

    def test_output_count_matches_input(self):
        svs = two_blob_set(seed=15)
        for trainer in (
            train_linear_fusion,
            train_multinomial_fusion,
            lambda s: train_gmm_fusion(s, k=2),
            lambda s: train_svm_poly(s),
        ):
            model = trainer(svs)
            assert fuse(model, svs).shape == (svs.n_trials,)

    def test_polarity_on_separable_data(self):
        svs = two_blob_set(seed=16, gap=4.0)
        for trainer in (
            train_linear_fusion,
            train_multinomial_fusion,
            lambda s: train_gmm_fusion(s, k=2),
            lambda s: train_svm_poly(s),
        ):
            assert training_eer(trainer(svs), svs) < 0.05

    def test_dimension_mismatch(self):
        svs = two_blob_set(seed=17)
        model = train_linear_fusion(svs)
        probe = make_set(np.zeros((2, 3)), ["spoof"] * 2)
        with pytest.raises(DataError, match="dims"):
            fuse(model, probe)

    @pytest.mark.parametrize("kind", [KIND_LINEAR, KIND_MULTINOMIAL, KIND_GMM, KIND_SVM])
    def test_model_file_round_trip(self, kind, tmp_path):
        svs = two_blob_set(seed=18)
        trainer = {
            KIND_LINEAR: train_linear_fusion,
            KIND_MULTINOMIAL: train_multinomial_fusion,
            KIND_GMM: lambda s: train_gmm_fusion(s, k=2, em_options=EmOptions(seed=2)),
            KIND_SVM: lambda s: train_svm_poly(s),
        }[kind]
        model = trainer(svs)
        path = tmp_path / "model.txt"
        save_fusion_model(path, model)
        back = load_fusion_model(path)
        assert back.kind == kind
        assert np.array_equal(fuse(model, svs), fuse(back, svs))


class TestScoreVectorAssembly:
    def write_files(self, tmp_path, svs):
        paths = []
        for dim in range(svs.dims):
            path = tmp_path / f"cm{dim}.scores"
            write_score_file(path, svs.column_rows(dim))
            paths.append(path)
        return paths

    def test_round_trip_via_files(self, tmp_path):
        svs = two_blob_set(seed=19)
        paths = self.write_files(tmp_path, svs)
        back = score_vectors_from_files(paths)
        assert back.utterance_ids == svs.utterance_ids
        assert back.keys == svs.keys
        assert np.allclose(back.vectors, svs.vectors, atol=1e-6)

    def test_mismatched_utterances_hard_error(self, tmp_path):
        svs = two_blob_set(seed=20)
        paths = self.write_files(tmp_path, svs)
        rows = [r for r in fused_rows(svs, svs.vectors[:, 0])]
        rows[0] = type(rows[0])("other_utt", rows[0].attack_id, rows[0].key, 0.0)
        write_score_file(paths[1], rows)
        with pytest.raises(DataError, match="missing from"):
            score_vectors_from_files(paths)

    def test_label_disagreement_hard_error(self, tmp_path):
        svs = two_blob_set(seed=21)
        paths = self.write_files(tmp_path, svs)
        rows = svs.column_rows(1)
        bad = type(rows[0])(rows[0].utterance_id, "A05", "spoof", rows[0].score)
        write_score_file(paths[1], [bad] + rows[1:])
        with pytest.raises(DataError, match="labelled"):
            score_vectors_from_files(paths)

    def test_trial_count_mismatch(self, tmp_path):
        svs = two_blob_set(seed=22)
        paths = self.write_files(tmp_path, svs)
        write_score_file(paths[1], svs.column_rows(1)[:-1])
        with pytest.raises(DataError, match="trials"):
            score_vectors_from_files(paths)


def test_standardizer_handles_constant_columns():
    vectors = np.column_stack([np.ones(10), np.arange(10.0)])
    std = Standardizer.fit(vectors)
    z = std.apply(vectors)
    assert np.allclose(z[:, 0], 0.0)
    assert np.isfinite(z).all()
