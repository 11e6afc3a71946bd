import csv
import dataclasses

import numpy as np
import pytest

from viewfill import (
    ClassTooSmall,
    EmptyQuerySet,
    ExperimentConfig,
    FoldSplit,
    LengthMismatch,
    SyntheticConfig,
    TrainConfig,
    average_precision_at_k,
    build_index,
    classify_missing,
    generate_synthetic,
    macro_f1,
    make_folds,
    map_at_k,
    micro_f1,
    rank,
    run_experiment,
    run_fold,
    train,
    write_map_curve_csv,
    write_report_csv,
    write_report_text,
)


class TestMakeFolds:
    def _hundred(self):
        ids = [f"c{c}_{i}" for c in range(10) for i in range(10)]
        labels = [c for c in range(10) for _ in range(10)]
        return ids, labels

    def test_hundred_samples_ten_classes(self):
        ids, labels = self._hundred()
        folds = make_folds(ids, labels, seed=0, n_folds=5)
        assert len(folds) == 5
        by_label = {i: l for i, l in zip(ids, labels)}
        for fold in folds:
            assert len(fold.test_ids) == 10
            assert len(fold.val_ids) == 10
            assert len(fold.train_ids) == 80
            # exactly one test sample per class
            assert sorted(by_label[i] for i in fold.test_ids) == list(range(10))

    def test_test_sets_disjoint_across_folds(self):
        ids, labels = self._hundred()
        folds = make_folds(ids, labels, seed=3, n_folds=5)
        tested = [i for fold in folds for i in fold.test_ids]
        assert len(tested) == len(set(tested))  # no id is ever tested twice
        # every id is held out (tested or validated) exactly once overall
        held_out = tested + [i for fold in folds for i in fold.val_ids]
        assert sorted(held_out) == sorted(ids)

    def test_deterministic(self):
        ids, labels = self._hundred()
        a = make_folds(ids, labels, seed=5)
        b = make_folds(ids, labels, seed=5)
        assert all(
            fa.train_ids == fb.train_ids and fa.val_ids == fb.val_ids and fa.test_ids == fb.test_ids
            for fa, fb in zip(a, b)
        )
        c = make_folds(ids, labels, seed=6)
        assert any(fa.test_ids != fc.test_ids for fa, fc in zip(a, c))

    def test_single_class_matches_manual_shuffle(self):
        ids = [f"s{i}" for i in range(10)]
        folds = make_folds(ids, [0] * 10, seed=9, n_folds=5)
        order = np.random.default_rng(9).permutation(10)
        shuffled = [ids[i] for i in order]
        for f, fold in enumerate(folds):
            assert fold.test_ids == (shuffled[f],)
            assert fold.val_ids == (shuffled[5 + f],)
            assert sorted(fold.train_ids) == sorted(set(ids) - {shuffled[f], shuffled[5 + f]})

    def test_uneven_class_sizes_stay_stratified(self):
        ids = [f"a{i}" for i in range(13)] + [f"b{i}" for i in range(11)]
        labels = [0] * 13 + [1] * 11
        folds = make_folds(ids, labels, seed=1, n_folds=5)
        tested = [i for fold in folds for i in fold.test_ids]
        assert len(tested) == len(set(tested))
        for fold in folds:
            n_a = sum(i.startswith("a") for i in fold.test_ids)
            assert n_a in (1, 2)  # 13 samples over 10 slices: sizes 1 or 2

    def test_class_too_small(self):
        ids = [f"s{i}" for i in range(9)]
        with pytest.raises(ClassTooSmall):
            make_folds(ids, [0] * 9, seed=0, n_folds=5)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            make_folds(["a"] * 10, [0] * 10, seed=0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            make_folds(["a", "b"], [0], seed=0)

    def test_overlapping_split_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            FoldSplit(0, ("a", "b"), ("b",), ("c",))


class TestAveragePrecision:
    def test_miss_then_hit(self):
        assert average_precision_at_k([False, True], 2) == pytest.approx(0.5, abs=1e-12)

    def test_perfect_prefix_scores_one(self):
        rel = [True, True] + [True] * 3  # more relevant items than k
        assert average_precision_at_k(rel, 2) == pytest.approx(1.0, abs=1e-12)

    def test_nothing_relevant(self):
        assert average_precision_at_k([False, False, False], 2) == 0.0

    def test_relevant_only_after_k(self):
        assert average_precision_at_k([False, False, True], 2) == 0.0

    def test_front_loading_is_optimal(self):
        rng = np.random.default_rng(55)
        for _ in range(30):
            rel = rng.random(12) < 0.4
            if not rel.any():
                continue
            k = int(rng.integers(1, 13))
            best = np.sort(rel)[::-1]
            assert average_precision_at_k(best, k) >= average_precision_at_k(rel, k) - 1e-12

    def test_full_depth_matches_sklearn(self):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(56)
        for _ in range(30):
            rel = rng.random(15) < 0.3
            if not rel.any():
                continue
            ours = average_precision_at_k(rel.tolist(), 15)
            ref = sklearn_metrics.average_precision_score(rel, -np.arange(15, dtype=float))
            assert ours == pytest.approx(float(ref), abs=1e-12)

    def test_k_validation(self):
        with pytest.raises(ValueError):
            average_precision_at_k([True], 0)

    def test_map_is_mean(self):
        rels = [[True, False], [False, True]]
        expected = (1.0 + 0.5) / 2.0
        assert map_at_k(rels, 2) == pytest.approx(expected, abs=1e-12)
        with pytest.raises(EmptyQuerySet):
            map_at_k([], 2)


class TestF1:
    def test_balanced_confusion_example(self):
        # both classes: TP=1, FP=1, FN=1, so per-class F1 = 2/(2+1+1) = 0.5
        preds = [0, 1, 0, 1]
        truths = [0, 1, 1, 0]
        assert macro_f1(preds, truths) == pytest.approx(0.5, abs=1e-12)

    def test_perfect_predictions(self):
        assert macro_f1([0, 1, 2], [0, 1, 2]) == 1.0

    def test_matches_sklearn(self):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(57)
        for _ in range(30):
            n = int(rng.integers(5, 40))
            n_classes = int(rng.integers(2, 6))
            preds = rng.integers(n_classes, size=n)
            truths = rng.integers(n_classes, size=n)
            ours = macro_f1(preds, truths)
            ref = sklearn_metrics.f1_score(truths, preds, average="macro", zero_division=0)
            assert ours == pytest.approx(float(ref), abs=1e-12)
            ours_micro = micro_f1(preds, truths)
            ref_micro = sklearn_metrics.f1_score(truths, preds, average="micro", zero_division=0)
            assert ours_micro == pytest.approx(float(ref_micro), abs=1e-12)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(58)
        preds = rng.integers(4, size=30)
        truths = rng.integers(4, size=30)
        mapping = np.array([7, 2, 9, 4])
        assert macro_f1(mapping[preds], mapping[truths]) == pytest.approx(
            macro_f1(preds, truths), abs=1e-12
        )

    def test_micro_is_accuracy(self):
        preds = [0, 1, 1, 2]
        truths = [0, 1, 2, 2]
        assert micro_f1(preds, truths) == pytest.approx(0.75, abs=1e-12)

    def test_absent_class_scores_zero(self):
        # class 2 never predicted, so it contributes 0; class 0 scores 2/3
        assert macro_f1([0, 0], [0, 2]) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_validation(self):
        with pytest.raises(LengthMismatch):
            macro_f1([0, 1], [0])
        with pytest.raises(ValueError):
            macro_f1([], [])


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()
        assert config.k_list == (1, 2, 3, 4, 5, 10, 50, 100)
        assert config.n_folds == 5 and config.fully_paired

    def test_k_list_must_increase(self):
        with pytest.raises(ValueError):
            ExperimentConfig(k_list=(1, 3, 2))
        with pytest.raises(ValueError):
            ExperimentConfig(k_list=(0, 1))
        with pytest.raises(ValueError):
            ExperimentConfig(k_list=())

    def test_n_folds_floor(self):
        with pytest.raises(ValueError):
            ExperimentConfig(n_folds=1)


def _small_data():
    return generate_synthetic(
        SyntheticConfig(
            classes=3, per_class=10, dim_view1=8, dim_view2=8, noise=0.4, seed=3
        )
    )


class TestRunFold:
    def test_fused_predictions_match_independent_classification(self):
        data = _small_data()
        config = ExperimentConfig(
            train=TrainConfig(epochs=3, learning_rate=1e-3, embed_dim=6, seed=4),
            k_list=(1, 3),
            n_folds=5,
            fold_seed=1,
        )
        folds = make_folds(data.view1.ids(), data.view1.labels(), config.fold_seed, 5)
        fold = folds[2]
        result = run_fold(
            data.view1, data.view2, data.scores_view1, data.scores_view2, fold, config
        )

        # rebuild the fold's model independently and classify query by query
        train_pair = [data.view1.subset(fold.train_ids), data.view2.subset(fold.train_ids)]
        fold_train = dataclasses.replace(config.train, seed=config.train.seed + fold.fold_index)
        trained = train(train_pair, fold_train)
        head = trained.head_for(0)
        index = build_index(train_pair[1], trained.head_for(1))
        for k in config.k_list:
            preds, truths = [], []
            for rec in data.view1.subset(fold.test_ids).records:
                own = data.scores_view1.by_id(rec.id)
                ranking = rank(index, head.project(rec.vector))
                fused = classify_missing(
                    own, rec.id, ranking, data.scores_view2, min(k, index.size)
                )
                preds.append(fused.predicted_label)
                truths.append(rec.label)
            assert result.fused_f1[k] == pytest.approx(macro_f1(preds, truths), abs=1e-12)

    def test_per_fold_training_seeds_differ(self):
        data = _small_data()
        config = ExperimentConfig(
            train=TrainConfig(epochs=1, embed_dim=4, seed=0), k_list=(1,), n_folds=5
        )
        report = run_experiment(
            data.view1, data.view2, data.scores_view1, data.scores_view2, config
        )
        # five folds trained with five different seeds on different splits
        assert len(report.folds) == 5
        assert len({f.fold_index for f in report.folds}) == 5

    def test_view_pairing_enforced(self):
        data = _small_data()
        half = data.view2.subset(data.view2.ids()[:15])
        config = ExperimentConfig(train=TrainConfig(epochs=1), k_list=(1,))
        with pytest.raises(ValueError, match="same sample ids"):
            run_experiment(data.view1, half, data.scores_view1, data.scores_view2, config)


@pytest.fixture(scope="module")
def harder_report():
    data = generate_synthetic(
        SyntheticConfig(
            classes=6, per_class=20, dim_view1=24, dim_view2=24,
            noise=1.5, temperature=0.5, seed=11,
        )
    )
    config = ExperimentConfig(
        train=TrainConfig(epochs=40, learning_rate=3e-3, seed=1),
        k_list=(1, 2, 5, 10),
        fold_seed=2,
    )
    return data, config, run_experiment(
        data.view1, data.view2, data.scores_view1, data.scores_view2, config
    )


class TestRunExperiment:
    def test_fusion_beats_no_fusion_on_noisy_data(self, harder_report):
        _, _, report = harder_report
        assert report.mean_f1 > report.mean_no_fusion
        assert report.mean_fully_paired >= report.mean_f1

    def test_frozen_regression_values(self, harder_report):
        _, _, report = harder_report
        assert report.k_star == 10
        assert report.mean_f1 == pytest.approx(0.9466666666666667, abs=1e-12)
        assert report.std_f1 == pytest.approx(0.0435464843161454, abs=1e-12)
        assert report.mean_no_fusion == pytest.approx(0.9133333333333333, abs=1e-12)
        assert report.mean_fully_paired == pytest.approx(0.9822222222222223, abs=1e-12)
        mean_map5, std_map5 = report.map_at_k[5]
        assert mean_map5 == pytest.approx(0.849, abs=1e-12)
        assert std_map5 == pytest.approx(0.0441457322853789, abs=1e-12)
        assert report.ttest.t == pytest.approx(1.6269784336399211, abs=1e-9)
        assert not report.ttest.significant

    def test_std_uses_population_convention(self, harder_report):
        _, _, report = harder_report
        assert report.std_f1 == pytest.approx(float(np.std(report.per_fold_f1)), abs=1e-12)

    def test_parallel_folds_match_serial(self, harder_report):
        data, config, serial = harder_report
        parallel = run_experiment(
            data.view1, data.view2, data.scores_view1, data.scores_view2, config, jobs=2
        )
        assert parallel.per_fold_f1 == serial.per_fold_f1
        assert parallel.map_at_k == serial.map_at_k
        assert parallel.k_star == serial.k_star
        assert parallel.ttest == serial.ttest

    def test_k_star_maximizes_validation_mean(self, harder_report):
        _, config, report = harder_report
        val_means = {
            k: float(np.mean([f.val_fused_f1[k] for f in report.folds]))
            for k in config.k_list
        }
        best = max(val_means.values())
        assert val_means[report.k_star] == best
        # ties resolve to the smallest k
        assert report.k_star == min(k for k, v in val_means.items() if v == best)


@pytest.fixture(scope="module")
def quick_report():
    data = _small_data()
    config = ExperimentConfig(
        train=TrainConfig(epochs=2, learning_rate=1e-3, embed_dim=6),
        k_list=(1, 2, 5),
    )
    return run_experiment(
        data.view1, data.view2, data.scores_view1, data.scores_view2, config
    )


class TestReportWriters:
    def test_text_report_lines(self, quick_report, tmp_path):
        path = tmp_path / "report.txt"
        write_report_text(quick_report, path)
        text = path.read_text()
        assert f"selected k: {quick_report.k_star}" in text
        assert "fused macro F1 mean:" in text
        assert "no-fusion macro F1" in text
        assert "paired t-test fused vs no-fusion:" in text
        assert "mAP@K" in text

    def test_csv_report_parses_back(self, quick_report, tmp_path):
        path = tmp_path / "report.csv"
        write_report_csv(quick_report, path)
        with open(path, newline="") as fh:
            rows = {(r[0], r[1]): r[2] for r in list(csv.reader(fh))[1:]}
        assert float(rows[("all", "fused_macro_f1_mean")]) == quick_report.mean_f1
        assert int(rows[("all", "k_star")]) == quick_report.k_star
        for i, v in enumerate(quick_report.per_fold_f1):
            assert float(rows[(str(i), "fused_macro_f1")]) == v

    def test_map_curve_csv(self, quick_report, tmp_path):
        path = tmp_path / "curve.csv"
        write_map_curve_csv(quick_report, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["k", "mean", "std"]
        ks = [int(r[0]) for r in rows[1:]]
        assert ks == sorted(quick_report.map_at_k)
        for r in rows[1:]:
            mean, std = quick_report.map_at_k[int(r[0])]
            assert float(r[1]) == mean and float(r[2]) == std
