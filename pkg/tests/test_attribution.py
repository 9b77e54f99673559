import itertools
import math

import numpy as np
import pytest

from shepherd.attribution import (
    Attribution,
    BackgroundSet,
    Coalition,
    ShapleyWeights,
    background_from_dataset,
    coalition_table,
    composite,
    mask_baseline,
    per_background_breakdown,
    run_method,
    sample_background,
    scale_baseline,
    shap_exact,
    shap_permutation,
    shep,
    shep_add,
    shep_remove,
    value_function,
)
from shepherd.errors import ComplexityGuardError, DataError, InconsistencyError, ParameterError
from shepherd.evaluation import complexity_audit, cosine_similarity, predicted_calls
from shepherd.patching import patchify
from shepherd.predictor import IntegratedModel, fit_reference
from shepherd.transforms import forward

from .conftest import PatchEnergyModel, make_instance


def oracle_shapley(m, x, bg):
    """Average marginal contribution over all d! orders, one model call per (coalition, background)."""
    cache = {}

    def v(members):
        key = frozenset(members)
        if key not in cache:
            s = Coalition(m.d, tuple(key))
            cache[key] = np.mean([m.evaluate(composite(x, bg.patched(k), s)) for k in range(bg.n)], axis=0)
        return cache[key]

    psi = np.zeros((m.d, m.predictor.n_classes))
    orders = list(itertools.permutations(range(m.d)))
    for order in orders:
        prefix = []
        for i in order:
            before = v(prefix)
            prefix.append(i)
            psi[i] += v(prefix) - before
    return psi / len(orders)


def symmetric_instance(seed: int, i: int = 1, j: int = 2):
    """Patches i and j carry identical z in x and every background, and the model treats them alike."""
    m, x, bg, model = make_instance(5, 4, seed, squash=True)
    labels = m.labels

    def mirror(z):
        z = z.copy()
        z[labels == j] = z[labels == i]
        return z

    swap = np.arange(m.d)
    swap[[i, j]] = [j, i]
    weights = model.weights.copy()
    weights[j] = weights[i]
    pair = (model.pair + model.pair[:, swap][:, :, swap]) / 2
    sym = PatchEnergyModel(labels, weights, pair, model.bias, squash=True)
    rep = m.rep.with_z(mirror(m.rep.z))
    sm = IntegratedModel(sym, rep, m.spec)
    sbg = BackgroundSet(np.stack([mirror(z) for z in bg.zs]), bg.labels, bg.spec)
    return sm, patchify(rep.z, m.spec), sbg


class TestCoalition:
    def test_bits_round_trip(self):
        s = Coalition.from_bits(0b1011, 5)
        assert s.members == (0, 1, 3)
        assert s.bits == 0b1011
        assert 3 in s and 2 not in s
        assert len(Coalition.full(4)) == 4 and len(Coalition.empty(4)) == 0

    def test_bits_outside_range(self):
        with pytest.raises(ParameterError):
            Coalition.from_bits(0b100000, 5)
        with pytest.raises(ParameterError):
            Coalition(3, (0, 3))

    def test_weights_sum_to_one(self):
        for d in (1, 2, 7, 15):
            assert ShapleyWeights.for_players(d).total() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(ShapleyWeights.for_players(3).values, [1 / 3, 1 / 6, 1 / 3])


class TestValueFunction:
    def test_empty_coalition_is_zero(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 3, seed=0)
        assert not np.any(value_function(m, x, bg, Coalition.empty(4)))

    def test_grand_coalition(self, instance_factory):
        m, x, bg, model = instance_factory(4, 3, seed=1)
        v = value_function(m, x, bg, Coalition.full(4))
        baseline = np.mean([m.evaluate(bg.patched(k)) for k in range(bg.n)], axis=0)
        np.testing.assert_allclose(v, m.evaluate(x) - baseline, atol=1e-12)

    def test_composite_keeps_members_from_x(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 2, seed=2)
        b = bg.patched(0)
        c = composite(x, b, Coalition(4, (1, 2)))
        np.testing.assert_array_equal(c.patches[1].values, x.patches[1].values)
        np.testing.assert_array_equal(c.patches[0].values, b.patches[0].values)

    def test_composite_geometry_checked(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 2, seed=3)
        with pytest.raises(InconsistencyError):
            composite(x, bg.patched(0), Coalition(5, (1,)))


class TestExactShapley:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_permutation_oracle(self, instance_factory, seed):
        d = 2 + seed % 4
        m, x, bg, _ = instance_factory(d, 3, seed=seed)
        np.testing.assert_allclose(shap_exact(m, x, bg).values, oracle_shapley(m, x, bg), atol=1e-10)

    @pytest.mark.parametrize("seed", range(50))
    def test_efficiency(self, instance_factory, seed):
        d = 1 + seed % 8
        m, x, bg, _ = instance_factory(d, 1 + seed % 5, seed=seed)
        table = coalition_table(m, x, bg)
        attr = shap_exact(m, x, bg)
        np.testing.assert_allclose(attr.values.sum(axis=0), table[-1] - table[0], atol=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_symmetry(self, seed):
        m, x, bg = symmetric_instance(seed)
        psi = shap_exact(m, x, bg).values
        np.testing.assert_allclose(psi[1], psi[2], atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_dummy_patch(self, instance_factory, seed):
        m, x, bg, _ = instance_factory(5, 3, seed=seed, dummy=2)
        np.testing.assert_allclose(shap_exact(m, x, bg).values[2], 0.0, atol=1e-10)

    def test_single_patch_gets_everything(self, instance_factory):
        m, x, bg, _ = instance_factory(1, 4, seed=5)
        table = coalition_table(m, x, bg)
        np.testing.assert_allclose(shap_exact(m, x, bg).values[0], table[1] - table[0], atol=1e-12)

    def test_guard(self, instance_factory):
        m, x, bg, _ = instance_factory(6, 2, seed=6)
        with pytest.raises(ComplexityGuardError) as err:
            shap_exact(m, x, bg, max_d=5)
        assert err.value.estimated_calls == 64 * 2
        assert m.call_count == 0


class TestEstimators:
    @pytest.mark.parametrize("seed", range(10))
    def test_shep_is_mean_of_remove_and_add(self, instance_factory, seed):
        m, x, bg, _ = instance_factory(6, 4, seed=seed)
        both = shep(m, x, bg).values
        half = (shep_remove(m, x, bg).values + shep_add(m, x, bg).values) / 2
        np.testing.assert_allclose(both, half, atol=1e-12)

    def test_remove_definition(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 3, seed=11)
        psi = shep_remove(m, x, bg).values
        full = Coalition.full(4)
        for i in range(4):
            rest = Coalition(4, tuple(j for j in full.members if j != i))
            expected = m.evaluate(x) - np.mean([m.evaluate(composite(x, bg.patched(k), rest)) for k in range(bg.n)], axis=0)
            np.testing.assert_allclose(psi[i], expected, atol=1e-12)

    def test_full_coalition_is_background_free(self, instance_factory):
        m, x, bg, _ = instance_factory(5, 3, seed=14)
        full = Coalition.full(5)
        for k in range(bg.n):
            np.testing.assert_allclose(m.evaluate(composite(x, bg.patched(k), full)), m.evaluate(x), atol=1e-12)

    def test_add_definition(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 3, seed=12)
        psi = shep_add(m, x, bg).values
        for i in range(4):
            one = Coalition(4, (i,))
            diffs = [m.evaluate(composite(x, bg.patched(k), one)) - m.evaluate(bg.patched(k)) for k in range(bg.n)]
            np.testing.assert_allclose(psi[i], np.mean(diffs, axis=0), atol=1e-12)

    def test_single_patch_estimators_agree(self, instance_factory):
        m, x, bg, _ = instance_factory(1, 3, seed=13)
        exact = shap_exact(m, x, bg).values
        for engine in (shep_remove, shep_add, shep):
            np.testing.assert_allclose(engine(m, x, bg).values, exact, atol=1e-12)
        np.testing.assert_allclose(shap_permutation(m, x, bg, 2, 0).values, exact, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_additive_model_is_exact(self, instance_factory, seed):
        m, x, bg, _ = instance_factory(6, 4, seed=seed, pair_scale=0.0, squash=False)
        exact = shap_exact(m, x, bg).values
        for engine in (shep_remove, shep_add, shep):
            np.testing.assert_allclose(engine(m, x, bg).values, exact, atol=1e-10)
        np.testing.assert_allclose(shap_permutation(m, x, bg, 3, seed).values, exact, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_permutation_converges(self, instance_factory, seed):
        m, x, bg, _ = instance_factory(8, 3, seed=seed, pair_scale=0.05, squash=False)
        exact = shap_exact(m, x, bg).values
        approx = shap_permutation(m, x, bg, 50, seed).values
        assert np.linalg.norm(approx - exact) / np.linalg.norm(exact) < 0.05

    def test_permutation_seeded(self, instance_factory):
        m, x, bg, _ = instance_factory(5, 2, seed=14)
        a = shap_permutation(m, x, bg, 4, 99)
        b = shap_permutation(m, x, bg, 4, 99)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.seed == 99 and a.k_p == 4

    def test_permutation_rejects_zero_kp(self, instance_factory):
        m, x, bg, _ = instance_factory(3, 2, seed=15)
        with pytest.raises(ParameterError):
            shap_permutation(m, x, bg, 0, 1)

    def test_shep_tracks_exact_better_than_baselines(self, instance_factory):
        wins = 0
        trials = 20
        for seed in range(trials):
            m, x, bg, _ = instance_factory(6, 6, seed=100 + seed, pair_scale=0.1, squash=False)
            exact = shap_exact(m, x, bg).values
            s = cosine_similarity(shep(m, x, bg).values, exact)
            baseline = max(
                cosine_similarity(mask_baseline(m, x).values, exact),
                cosine_similarity(scale_baseline(m, x).values, exact),
            )
            wins += s > baseline
        assert wins >= 0.9 * trials

    def test_breakdown(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 6, seed=16)
        attr = shep(m, x, bg)
        bd = per_background_breakdown(attr)
        assert bd.rows.shape == (6, 4, 3)
        np.testing.assert_allclose(bd.mean, attr.values, atol=1e-12)
        assert sorted(bd.by_class) == [0, 1, 2]
        np.testing.assert_allclose(bd.by_class[1], bd.rows[[1, 4]].mean(axis=0))

    def test_breakdown_needs_shep_family(self, instance_factory):
        m, x, bg, _ = instance_factory(3, 2, seed=17)
        with pytest.raises(ParameterError):
            per_background_breakdown(shap_exact(m, x, bg))


class TestBaselines:
    def test_mask_definition(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 1, seed=20)
        psi = mask_baseline(m, x).values
        i = 2
        zeroed = x.with_patch(i, np.zeros_like(x.patches[i].values))
        np.testing.assert_allclose(psi[i], m.evaluate(x) - m.evaluate(zeroed), atol=1e-12)

    def test_scale_with_unit_factor_is_zero(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 1, seed=21)
        np.testing.assert_allclose(scale_baseline(m, x, (1.0,)).values, 0.0, atol=1e-12)

    def test_scale_zero_factor_equals_mask(self, instance_factory):
        m, x, bg, _ = instance_factory(4, 1, seed=22)
        np.testing.assert_allclose(scale_baseline(m, x, (0.0,)).values, mask_baseline(m, x).values, atol=1e-12)

    @pytest.mark.parametrize("factors", [(0.5, -1.0), (float("inf"),), ()])
    def test_bad_scale_factors(self, instance_factory, factors):
        m, x, bg, _ = instance_factory(3, 1, seed=23)
        with pytest.raises(ParameterError):
            scale_baseline(m, x, factors)


class TestCallCounts:
    @pytest.mark.parametrize(
        "method,d,n,expected",
        [
            ("shap_exact", 4, 3, 48),
            ("shap_perm", 4, 3, 2 * 5 * 5 * 3),
            ("shep_remove", 4, 3, 13),
            ("shep_add", 4, 3, 15),
            ("shep", 4, 3, 28),
            ("mask", 4, 3, 5),
            ("scale", 4, 3, 13),
        ],
    )
    def test_measured_equals_formula(self, instance_factory, method, d, n, expected):
        m, x, bg, _ = instance_factory(d, n, seed=30)
        attr = run_method(method, m, x, bg, seed=1)
        assert attr.model_calls == expected
        assert m.call_count == expected
        assert complexity_audit(attr).passed

    @pytest.mark.parametrize("method", ["shap_exact", "shap_perm", "shep", "mask", "scale"])
    def test_counts_hold_for_uneven_batches(self, instance_factory, monkeypatch, method):
        monkeypatch.setenv("SHEPHERD_BATCH", "5")
        m, x, bg, _ = instance_factory(5, 4, seed=31)
        attr = run_method(method, m, x, bg, k_p=2, seed=3)
        assert attr.model_calls == predicted_calls(method, 5, 4, k_p=2, k_s=3)

    def test_zero_patches(self):
        empty = Attribution(np.zeros((0, 3)), "shep", "freq", (4,), 0, 0.0)
        assert empty.d == 0
        assert predicted_calls("shep", 0, 5) == 0
        assert complexity_audit(empty).passed

    def test_background_required(self, instance_factory):
        m, x, bg, _ = instance_factory(3, 2, seed=32)
        with pytest.raises(ParameterError):
            run_method("shep", m, x, None)
        with pytest.raises(ParameterError):
            run_method("lime", m, x, bg)


class TestDeterminism:
    @pytest.mark.parametrize("method", ["shap_exact", "shap_perm", "shep", "scale"])
    def test_worker_count_does_not_change_results(self, instance_factory, monkeypatch, method):
        monkeypatch.setenv("SHEPHERD_BATCH", "8")
        m, x, bg, _ = instance_factory(5, 3, seed=40)
        one = run_method(method, m, x, bg, seed=5, workers=1)
        four = run_method(method, m, x, bg, seed=5, workers=4)
        np.testing.assert_array_equal(one.values, four.values)
        assert one.model_calls == four.model_calls

    def test_batch_size_only_changes_rounding(self, instance_factory, monkeypatch):
        m, x, bg, _ = instance_factory(5, 3, seed=41)
        a = shap_exact(m, x, bg).values
        monkeypatch.setenv("SHEPHERD_BATCH", "3")
        np.testing.assert_allclose(shap_exact(m, x, bg).values, a, atol=1e-12)


class TestBackgroundSampling:
    def test_per_class_from_train_split(self, small_dataset):
        idx = sample_background(small_dataset, 2, seed=0)
        assert idx.size == 6
        assert np.all(small_dataset.train[idx])
        assert np.bincount(small_dataset.labels[idx]).tolist() == [2, 2, 2]
        np.testing.assert_array_equal(idx, np.sort(idx))
        np.testing.assert_array_equal(idx, sample_background(small_dataset, 2, seed=0))

    def test_excluded_sample_never_drawn(self, small_dataset):
        first = int(small_dataset.train_indices()[0])
        for seed in range(5):
            assert first not in sample_background(small_dataset, 3, seed=seed, exclude=[first])

    def test_too_few_samples(self, small_dataset):
        with pytest.raises(DataError):
            sample_background(small_dataset, 10, seed=0)

    def test_background_geometry_must_match(self, small_dataset):
        ref = fit_reference(small_dataset)
        rep = forward("freq", small_dataset.signals[0])
        m = IntegratedModel(ref, rep, "48")
        bg = background_from_dataset(small_dataset, [1, 2], rep, "24")
        with pytest.raises(InconsistencyError):
            shep(m, patchify(rep.z, "48"), bg)


@pytest.mark.slow
class TestFaultSample:
    """End-to-end on an F2 test sample with the reference predictor."""

    @pytest.fixture(scope="class")
    def setup(self, fault_dataset):
        ds = fault_dataset
        ref = fit_reference(ds)
        s = int(ds.test_indices()[ds.labels[ds.test_indices()] == 2][0])
        rep = forward("env", ds.signals[s])
        bg_idx = sample_background(ds, 3, seed=0)
        return ds, ref, s, rep, bg_idx

    def test_envelope_attribution_points_at_fault_band(self, setup):
        ds, ref, s, rep, bg_idx = setup
        m = IntegratedModel(ref, rep, "8")
        bg = background_from_dataset(ds, bg_idx, rep, "8")
        attr = shep(m, patchify(rep.z, m.spec), bg)
        assert attr.model_calls == 2 * m.d * bg.n + bg.n + 1
        # 125 Hz lives in envelope bin 25, i.e. patch 3 of 8-bin patches.
        top = [i for i, _ in attr.top_patches(2, k=3)]
        assert 3 in top

    def test_exact_and_shep_agree_at_coarse_patches(self, setup):
        ds, ref, s, rep, bg_idx = setup
        m = IntegratedModel(ref, rep, "10")
        bg = background_from_dataset(ds, bg_idx, rep, "10")
        x = patchify(rep.z, m.spec)
        assert m.d == 12
        exact = shap_exact(m, x, bg)
        approx = shep(m, x, bg)
        assert exact.model_calls == 2**12 * bg.n
        assert cosine_similarity(approx.values[:, 2], exact.values[:, 2]) > 0.8
        assert math.isfinite(exact.wall_time) and exact.wall_time > 0
