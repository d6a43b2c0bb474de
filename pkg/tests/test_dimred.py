import numpy as np
import pytest

from statdiv.dataset import SyntheticSpec, generate_synthetic
from statdiv.density import Bandwidth
from statdiv.divergence import DivergenceKind, divergence_matrix, resolve_bandwidths
from statdiv.dimred import (
    AffinityMatrix,
    DrConfig,
    affinity_from_divergences,
    build_affinity,
    dr_cost,
    dr_euclidean_gradient,
    learn_projection,
    project_sets,
    t_ratio_gradient,
)
from statdiv.manifold import CgOptions, is_orthonormal, random_orthonormal


def finite_difference(fn, w, step=1e-6):
    out = np.zeros_like(w)
    for a in range(w.shape[0]):
        for b in range(w.shape[1]):
            plus = w.copy(); plus[a, b] += step
            minus = w.copy(); minus[a, b] -= step
            out[a, b] = (fn(plus) - fn(minus)) / (2 * step)
    return out


def toy_problem(seed, count=4, n=6, dim=4):
    rng = np.random.default_rng(seed)
    mats = [rng.normal(rng.uniform(-1, 1), 1.0, size=(n, dim)) for _ in range(count)]
    labels = np.arange(count) % 2
    div = rng.uniform(0.1, 1.5, size=(count, count))
    div = 0.5 * (div + div.T)
    np.fill_diagonal(div, 0.0)
    affinity = affinity_from_divergences(div, labels, nu_w=1, nu_b=1)
    return mats, labels, affinity, rng


class TestAffinity:
    def test_two_class_construction(self):
        # within-class divergences 0.1, cross 5.0
        values = np.array([
            [0.0, 0.1, 5.0, 5.0],
            [0.1, 0.0, 5.0, 5.0],
            [5.0, 5.0, 0.0, 0.1],
            [5.0, 5.0, 0.1, 0.0],
        ])
        labels = [0, 0, 1, 1]
        affinity = affinity_from_divergences(values, labels, nu_w=1, nu_b=1)
        assert affinity.values[0, 1] == 1
        assert affinity.values[2, 3] == 1
        assert affinity.values[0, 2] == -1  # nearest cross neighbor by index tie
        assert np.all(np.diag(affinity.values) == 0)

    def test_zero_between_neighbors(self):
        values = np.array([
            [0.0, 0.1, 5.0, 5.0],
            [0.1, 0.0, 5.0, 5.0],
            [5.0, 5.0, 0.0, 0.1],
            [5.0, 5.0, 0.1, 0.0],
        ])
        affinity = affinity_from_divergences(values, [0, 0, 1, 1], nu_w=1, nu_b=0)
        assert not np.any(affinity.values == -1)

    def test_or_rule_symmetry(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0.1, 2.0, size=(9, 9))
        values = 0.5 * (values + values.T)
        np.fill_diagonal(values, 0.0)
        labels = rng.permutation([0, 0, 0, 1, 1, 1, 2, 2, 2])
        affinity = affinity_from_divergences(values, labels, nu_w="auto", nu_b=1)
        np.testing.assert_array_equal(affinity.values, affinity.values.T)

    def test_auto_nu_w_is_min_class_size_minus_one(self):
        values = np.zeros((5, 5))
        affinity = affinity_from_divergences(values, [0, 0, 0, 1, 1], nu_w="auto", nu_b=1)
        assert affinity.nu_w == 1

    def test_nu_b_must_not_exceed_nu_w(self):
        values = np.zeros((4, 4))
        with pytest.raises(ValueError, match="nu_b"):
            affinity_from_divergences(values, [0, 0, 1, 1], nu_w=1, nu_b=2)

    def test_build_affinity_uses_full_dimensional_divergences(self):
        rng = np.random.default_rng(1)
        sets = [rng.normal(c, 1.0, size=(15, 2)) for c in (0.0, 0.2, 6.0, 6.2)]
        labels = [0, 0, 1, 1]
        affinity = build_affinity(sets, labels, nu_w=1, nu_b=1,
                                  kind=DivergenceKind.HELLINGER_SQUARED)
        div = divergence_matrix(sets, DivergenceKind.HELLINGER_SQUARED)
        expected = affinity_from_divergences(div.values, labels, nu_w=1, nu_b=1)
        np.testing.assert_array_equal(affinity.values, expected.values)

    def test_matrix_invariants(self):
        with pytest.raises(ValueError, match="symmetric"):
            AffinityMatrix(values=np.array([[0, 1], [0, 0]]), nu_w=1, nu_b=1)
        with pytest.raises(ValueError, match="diagonal"):
            AffinityMatrix(values=np.array([[1, 0], [0, 0]]), nu_w=1, nu_b=1)


class TestDrCost:
    def test_zero_affinity_gives_zero(self):
        mats, _, _, rng = toy_problem(2)
        affinity = AffinityMatrix(values=np.zeros((4, 4), dtype=int), nu_w=0, nu_b=0)
        w = random_orthonormal(4, 2, rng)
        assert dr_cost(w, mats, affinity, DivergenceKind.HELLINGER_SQUARED) == 0.0

    def test_identical_sets_with_positive_affinity_give_zero(self):
        rng = np.random.default_rng(3)
        base = rng.standard_normal((8, 4))
        mats = [base.copy() for _ in range(3)]
        values = np.ones((3, 3), dtype=int) - np.eye(3, dtype=int)
        affinity = AffinityMatrix(values=values, nu_w=2, nu_b=0)
        w = random_orthonormal(4, 2, rng)
        assert dr_cost(w, mats, affinity, DivergenceKind.HELLINGER_SQUARED) == 0.0

    @pytest.mark.parametrize("kind", list(DivergenceKind))
    def test_invariant_to_basis_rotation(self, kind):
        mats, _, affinity, rng = toy_problem(4)
        w = random_orthonormal(4, 2, rng)
        bandwidths = resolve_bandwidths(project_sets(mats, w), "isotropic")
        base = dr_cost(w, mats, affinity, kind, bandwidths)
        for _ in range(5):
            rot, _ = np.linalg.qr(rng.standard_normal((2, 2)))
            rotated = dr_cost(w @ rot, mats, affinity, kind, bandwidths)
            assert rotated == pytest.approx(base, abs=1e-8)


class TestTRatioGradient:
    @pytest.mark.parametrize("trial", range(20))
    def test_matches_central_differences(self, trial):
        rng = np.random.default_rng(100 + trial)
        p = rng.normal(0.0, 1.0, size=(6, 4))
        q = rng.normal(0.5, 1.0, size=(6, 4))
        x = rng.standard_normal(4)
        w = random_orthonormal(4, 2, rng)
        bw_p = Bandwidth(rng.uniform(0.3, 1.0, size=2))
        bw_q = Bandwidth(rng.uniform(0.3, 1.0, size=2))

        from scipy.special import logsumexp

        def t_of(frame):
            xp = (x @ frame).reshape(1, -1)
            def logdens(samples, bw):
                proj = samples @ frame
                diff = xp[:, None, :] - proj[None, :, :]
                rows = -0.5 * np.einsum("aij,j->ai", diff * diff, 1.0 / bw.diag)
                return float(logsumexp(rows, axis=1)[0]) - np.log(len(samples)) \
                    - 0.5 * float(np.sum(np.log(2 * np.pi * bw.diag)))
            z = logdens(p, bw_p) - logdens(q, bw_q)
            return 1.0 / (1.0 + np.exp(-z))

        analytic = t_ratio_gradient(w, x, p, q, bw_p, bw_q)
        numeric = finite_difference(t_of, w)
        scale = max(np.max(np.abs(numeric)), 1e-12)
        assert np.max(np.abs(analytic - numeric)) / scale <= 1e-4

    def test_equal_models_give_zero(self):
        rng = np.random.default_rng(5)
        p = rng.standard_normal((6, 4))
        w = random_orthonormal(4, 2, rng)
        bw = Bandwidth([0.5, 0.8])
        gradient = t_ratio_gradient(w, rng.standard_normal(4), p, p.copy(), bw, bw)
        np.testing.assert_allclose(gradient, 0.0, atol=1e-12)

    def test_invariant_to_duplicating_both_sample_sets(self):
        # duplicating every kernel term leaves both densities, hence T, unchanged
        rng = np.random.default_rng(6)
        p = rng.standard_normal((5, 3))
        q = rng.normal(0.3, 1.0, size=(7, 3))
        x = rng.standard_normal(3)
        w = random_orthonormal(3, 2, rng)
        bw_p, bw_q = Bandwidth([0.4, 0.6]), Bandwidth([0.5, 0.5])
        base = t_ratio_gradient(w, x, p, q, bw_p, bw_q)
        doubled = t_ratio_gradient(w, x, np.vstack([p, p]), np.vstack([q, q]), bw_p, bw_q)
        np.testing.assert_allclose(doubled, base, atol=1e-12)


class TestObjectiveGradient:
    def test_zero_affinity_gives_zero_matrix(self):
        mats, _, _, rng = toy_problem(7)
        affinity = AffinityMatrix(values=np.zeros((4, 4), dtype=int), nu_w=0, nu_b=0)
        w = random_orthonormal(4, 2, rng)
        gradient = dr_euclidean_gradient(w, mats, affinity, DivergenceKind.JEFFREY)
        np.testing.assert_array_equal(gradient, np.zeros((4, 2)))

    @pytest.mark.parametrize("kind", list(DivergenceKind))
    @pytest.mark.parametrize("trial", range(5))
    def test_matches_central_differences(self, kind, trial):
        mats, _, affinity, rng = toy_problem(200 + trial)
        w = random_orthonormal(4, 2, rng)
        bandwidths = resolve_bandwidths(project_sets(mats, w), "isotropic")
        analytic = dr_euclidean_gradient(w, mats, affinity, kind, bandwidths)
        numeric = finite_difference(
            lambda frame: dr_cost(frame, mats, affinity, kind, bandwidths), w
        )
        scale = max(np.max(np.abs(numeric)), 1e-12)
        assert np.max(np.abs(analytic - numeric)) / scale <= 1e-3

    def test_identical_projected_sets_contribute_nothing(self):
        # T = 1/2 everywhere zeroes the per-sample weight
        rng = np.random.default_rng(8)
        base = rng.standard_normal((8, 4))
        mats = [base.copy(), base.copy()]
        values = np.array([[0, 1], [1, 0]], dtype=int)
        affinity = AffinityMatrix(values=values, nu_w=1, nu_b=0)
        w = random_orthonormal(4, 2, rng)
        gradient = dr_euclidean_gradient(w, mats, affinity,
                                         DivergenceKind.HELLINGER_SQUARED)
        np.testing.assert_allclose(gradient, 0.0, atol=1e-12)


class TestLearnProjection:
    def benchmark(self, seed):
        spec = SyntheticSpec(classes=3, sets_per_class=4, samples_per_set=24, dim=20,
                             class_separation=4.0, within_class_jitter=1.0, seed=seed)
        return generate_synthetic(spec)

    def compactness_ratio(self, sets, labels, kind):
        values = divergence_matrix(sets, kind).values
        labels = np.asarray(labels)
        same = (labels[:, None] == labels[None, :]) & ~np.eye(len(labels), dtype=bool)
        return values[same].mean() / values[labels[:, None] != labels[None, :]].mean()

    def test_cost_trace_settles_within_fifty_iterations(self):
        ds = self.benchmark(0)
        config = DrConfig(target_dim=3, cg=CgOptions(max_iters=50, rel_cost_tol=1e-4), seed=0)
        result = learn_projection(ds.sets, ds.labels, config)
        costs = result.cg.costs
        assert np.all(np.diff(costs) <= 0.0)
        assert result.cg.iterations <= 50
        rel = abs(costs[-1] - costs[-2]) / max(abs(costs[-2]), 1e-12)
        assert rel < 1e-4

    def test_classes_become_more_compact(self):
        ds = self.benchmark(1)
        config = DrConfig(target_dim=3, cg=CgOptions(max_iters=50, rel_cost_tol=1e-4), seed=1)
        result = learn_projection(ds.sets, ds.labels, config)
        pre = self.compactness_ratio([fs.features for fs in ds.sets], ds.labels, config.kind)
        post = self.compactness_ratio(project_sets(ds.sets, result.point), ds.labels, config.kind)
        assert post < pre

    def test_near_full_dimension_keeps_invariants(self):
        rng = np.random.default_rng(9)
        sets = [rng.normal(c, 1.0, size=(10, 4)) for c in (0.0, 0.1, 3.0, 3.1)]
        labels = [0, 0, 1, 1]
        config = DrConfig(target_dim=3, cg=CgOptions(max_iters=10), seed=2)
        result = learn_projection(sets, labels, config)
        assert is_orthonormal(result.point)
        assert result.point.shape == (4, 3)

    def test_random_init_is_seed_deterministic(self):
        rng = np.random.default_rng(10)
        sets = [rng.normal(c, 1.0, size=(10, 5)) for c in (0.0, 0.2, 2.0, 2.2)]
        labels = [0, 0, 1, 1]
        config = DrConfig(target_dim=2, cg=CgOptions(max_iters=5), init="random", seed=11)
        a = learn_projection(sets, labels, config)
        b = learn_projection(sets, labels, config)
        np.testing.assert_array_equal(a.point, b.point)

    def test_target_dim_validation(self):
        rng = np.random.default_rng(12)
        sets = [rng.standard_normal((8, 3)) for _ in range(4)]
        with pytest.raises(ValueError, match="target_dim"):
            learn_projection(sets, [0, 0, 1, 1], DrConfig(target_dim=3))
        with pytest.raises(ValueError, match="target_dim"):
            DrConfig(target_dim=0)
