import math

import numpy as np
import pandas as pd
import pytest

from shepherd.attribution import Attribution, background_from_dataset, run_method, sample_background, shep
from shepherd.errors import DataError, ParameterError, UndefinedSimilarityError
from shepherd.evaluation import (
    SweepRecord,
    band_contribution,
    bench,
    complexity_audit,
    cosine_similarity,
    patch_sweep_stats,
    predicted_calls,
    similarity_matrix,
    sweep_trend,
)
from shepherd.patching import patchify
from shepherd.predictor import IntegratedModel, default_bands, fit_reference
from shepherd.transforms import forward


def attr(values, method="shap_exact", sample_index=None) -> Attribution:
    return Attribution(
        values=np.asarray(values, dtype=float),
        method=method,
        domain="freq",
        patch=(4,),
        model_calls=0,
        wall_time=0.0,
        class_names=("H", "F1", "F2"),
        sample_index=sample_index,
    )


class TestCosine:
    def test_self_similarity(self):
        p = np.random.default_rng(0).normal(size=(5, 3))
        assert cosine_similarity(p, p) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_analytic(self):
        assert cosine_similarity([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2))

    def test_flattening(self):
        rng = np.random.default_rng(1)
        p, q = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        assert cosine_similarity(p, q) == cosine_similarity(p.ravel(), q.ravel())

    def test_zero_vector(self):
        with pytest.raises(UndefinedSimilarityError):
            cosine_similarity([0.0, 0.0], [1.0, 2.0])

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])


class TestSimilarityMatrix:
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.refs = [attr(rng.normal(size=(6, 3)), sample_index=i) for i in range(6)]
        self.labels = [0, 0, 1, 1, 2, 2]

    def test_identical_is_all_ones(self):
        cand = [attr(r.values, "shep", r.sample_index) for r in self.refs]
        report = similarity_matrix(self.refs, cand, self.labels)
        np.testing.assert_allclose(report.matrix, 1.0)
        assert report.counts.tolist() == [[2, 2, 2]] * 3
        assert report.method == "shep" and report.reference_method == "shap_exact"
        assert report.variance == pytest.approx(0.0, abs=1e-20)

    def test_negated_is_all_minus_one(self):
        cand = [attr(-r.values, "mask", r.sample_index) for r in self.refs]
        np.testing.assert_allclose(similarity_matrix(self.refs, cand, self.labels).matrix, -1.0)

    def test_zero_column_excluded(self):
        values = self.refs[0].values.copy()
        values[:, 1] = 0.0
        cand = [attr(values, "mask", 0)] + [attr(r.values, "mask", r.sample_index) for r in self.refs[1:]]
        report = similarity_matrix(self.refs, cand, self.labels)
        assert report.excluded == 1
        assert report.counts[0, 1] == 1
        assert np.isnan(report.samples[0, 1])

    def test_frame_labels(self):
        cand = [attr(r.values, "shep", r.sample_index) for r in self.refs]
        frame = similarity_matrix(self.refs, cand, self.labels).to_frame()
        assert list(frame.index) == ["sample:H", "sample:F1", "sample:F2"]
        assert list(frame.columns) == ["pred:H", "pred:F1", "pred:F2"]

    def test_unpaired_inputs(self):
        with pytest.raises(DataError):
            similarity_matrix(self.refs, self.refs[:-1], self.labels)

    def test_mismatched_samples(self):
        cand = [attr(r.values, "shep", r.sample_index + 1) for r in self.refs]
        with pytest.raises(DataError):
            similarity_matrix(self.refs, cand, self.labels)

    def test_mismatched_geometry(self):
        cand = [attr(np.ones((5, 3)), "shep", r.sample_index) for r in self.refs]
        with pytest.raises(DataError):
            similarity_matrix(self.refs, cand, self.labels)


class TestSweepStats:
    def test_mean_and_population_variance(self):
        records = [
            SweepRecord("shep", "env", "4", 34, 0.8),
            SweepRecord("shep", "env", "4", 34, 0.6),
            {"method": "shep", "domain": "env", "patch": "16", "d": 12, "similarity": 0.9},
            {"method": "shep", "domain": "env", "patch": "16", "d": 12, "similarity": 0.9},
        ]
        stats = patch_sweep_stats(records)
        fine = stats[stats["patch"] == "4"].iloc[0]
        coarse = stats[stats["patch"] == "16"].iloc[0]
        assert fine["mean"] == pytest.approx(0.7)
        assert fine["variance"] == pytest.approx(0.01)
        assert coarse["variance"] == pytest.approx(0.0)
        assert list(stats["d"]) == [34, 12]

    def test_missing_and_single_run_cells(self):
        records = [SweepRecord("mask", "freq", "48", 21, 0.5)]
        expected = [("mask", "freq", "48", 21), ("mask", "freq", "24", 42)]
        stats = patch_sweep_stats(records, expected=expected).set_index("patch")
        assert bool(stats.loc["24", "missing"])
        assert stats.loc["24", "count"] == 0
        assert bool(stats.loc["48", "few_runs"])
        assert np.isnan(stats.loc["48", "variance"])

    def test_trend(self):
        records = [
            SweepRecord("shep", "freq", "3", 334, 0.4),
            SweepRecord("shep", "freq", "3", 334, 0.5),
            SweepRecord("shep", "freq", "48", 21, 0.9),
            SweepRecord("shep", "freq", "48", 21, 0.8),
        ]
        trend = sweep_trend(patch_sweep_stats(records))
        row = trend.iloc[0]
        assert row["coarse_patch"] == "48" and row["fine_patch"] == "3"
        assert bool(row["rising"])
        assert row["coarse_mean"] == pytest.approx(0.85)


class TestComplexity:
    def test_mask_on_finest_env_patches(self):
        assert predicted_calls("mask", 124) == 125

    def test_shep_example(self):
        assert predicted_calls("shep", 12, 15) == 376

    def test_perm_to_shep_ratio(self):
        ratio = predicted_calls("shap_perm", 334, 15, k_p=5) / predicted_calls("shep", 334, 15)
        assert ratio == pytest.approx(50250 / 10036)
        assert 5.0 < ratio < 5.05

    def test_unknown_method(self):
        with pytest.raises(ParameterError):
            predicted_calls("lime", 3, 2)

    def test_missing_parameters(self):
        with pytest.raises(ParameterError):
            predicted_calls("shap_perm", 3, 2)
        with pytest.raises(ParameterError):
            predicted_calls("scale", 3)

    def test_audit_of_measured_run(self, instance_factory):
        m, x, bg, _ = instance_factory(5, 3, seed=0)
        audit = complexity_audit(run_method("shap_perm", m, x, bg, k_p=3, seed=0))
        assert audit.predicted == audit.measured == 2 * 3 * 6 * 3
        assert audit.passed


class TestPipeline:
    @pytest.fixture(scope="class")
    def fitted(self, small_dataset):
        return fit_reference(small_dataset)

    def test_bench_rows(self, fitted, small_dataset):
        bg = sample_background(small_dataset, 1, seed=0)
        frame = bench(
            fitted,
            small_dataset,
            int(small_dataset.test_indices()[0]),
            bg,
            [("freq", "250"), ("env", "40")],
            ["mask", "shep", "shap_perm"],
            repetitions=2,
            k_p=2,
        )
        assert len(frame) == 6
        assert (frame["calls_measured"] == frame["calls_predicted"]).all()
        assert set(frame["d"]) == {5, 3}
        assert (frame["n"] == 3).all()
        assert (frame["median_s"] > 0).all()

    def test_bench_timing_follows_call_counts(self, fitted, small_dataset):
        bg = sample_background(small_dataset, 2, seed=0)
        frame = bench(
            fitted,
            small_dataset,
            int(small_dataset.test_indices()[0]),
            bg,
            [("freq", "84")],
            ["mask", "scale", "shep", "shap_perm"],
            repetitions=5,
            k_p=5,
        ).set_index("method")
        # d=12, n=6: 13, 37, 151 and 780 calls
        assert frame["calls_measured"].tolist() == [13, 37, 151, 780]
        t = frame["median_s"]
        assert t["mask"] < t["scale"] < t["shep"] < t["shap_perm"]

    def test_bench_rejects_zero_repetitions(self, fitted, small_dataset):
        with pytest.raises(ParameterError):
            bench(fitted, small_dataset, 0, [1], [("freq", "250")], ["mask"], repetitions=0)

    def test_band_contribution(self, fitted, small_dataset):
        s = int(small_dataset.test_indices()[-1])
        rep = forward("env", small_dataset.signals[s])
        m = IntegratedModel(fitted, rep, "8")
        bg = background_from_dataset(small_dataset, sample_background(small_dataset, 1, seed=1), rep, "8")
        a = shep(m, patchify(rep.z, m.spec), bg)
        frame = band_contribution(a, rep, "8", default_bands())
        assert list(frame.index) == ["env@50", "env@100", "env@125"]
        assert list(frame.columns) == ["H", "F1", "F2"]
        # 90-110 Hz covers envelope bins 18-22, all inside patch 2 (bins 16-23).
        np.testing.assert_allclose(frame.loc["env@100"].to_numpy(), a.values[2])


@pytest.mark.slow
def test_shep_tracks_exact_better_than_perturbation_baselines(fault_dataset):
    ds = fault_dataset
    ref = fit_reference(ds)
    bg_idx = sample_background(ds, 5, seed=0)
    test = ds.test_indices()
    picks = [int(i) for c in range(3) for i in test[ds.labels[test] == c][:5]]
    runs = {"shap_exact": [], "shep": [], "mask": [], "scale": []}
    for s in picks:
        rep = forward("freq", ds.signals[s])
        m = IntegratedModel(ref, rep, "84")
        assert m.d == 12
        x = patchify(rep.z, m.spec)
        bg = background_from_dataset(ds, bg_idx, rep, m.spec)
        assert bg.n == 15
        for method, out in runs.items():
            out.append(run_method(method, m, x, bg))
    labels = [int(ds.labels[s]) for s in picks]
    shep_report = similarity_matrix(runs["shap_exact"], runs["shep"], labels)
    mask_report = similarity_matrix(runs["shap_exact"], runs["mask"], labels)
    scale_report = similarity_matrix(runs["shap_exact"], runs["scale"], labels)
    assert np.all(shep_report.diagonal() > mask_report.diagonal())
    assert np.all(shep_report.diagonal() > scale_report.diagonal())
    assert shep_report.mean >= 0.8
    assert isinstance(shep_report.to_frame(), pd.DataFrame)
