import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snnclust import losses, nn
from snnclust.losses import (LossConfig, TemperatureSchedule, UndefinedLossError, bce_loss,
                             composite_loss, config_from_name, snnl, snnl_unsupervised,
                             temperature)

from conftest import finite_difference, relative_error, tiny_net


def _cos_dist(a, b):
    return 1.0 - a @ b / (np.linalg.norm(a) * np.linalg.norm(b))


def snnl_double_loop(acts, positive, T, dist=_cos_dist):
    """Literal evaluation; ``positive(i, j)`` says whether j counts for i."""
    b = len(acts)
    terms = []
    for i in range(b):
        num = den = 0.0
        has_peer = False
        for j in range(b):
            if j == i:
                continue
            e = math.exp(-dist(acts[i], acts[j]) / T)
            den += e
            if positive(i, j):
                num += e
                has_peer = True
        if has_peer:
            terms.append(-math.log(num / den))
    return sum(terms) / len(terms)


class TestBCE:
    def test_half_half(self):
        v, _ = bce_loss(np.full((2, 3), 0.5), np.full((2, 3), 0.5))
        assert v == pytest.approx(math.log(2))

    def test_target_one(self):
        v, g = bce_loss(np.ones((1, 4)), np.full((1, 4), 0.5))
        assert v == pytest.approx(math.log(2))
        assert np.all(g < 0)

    def test_brute_force(self, rng):
        x, r = rng.random((3, 3)), rng.uniform(0.05, 0.95, (3, 3))
        expected = 0.0
        for i in range(3):
            for j in range(3):
                expected += -(x[i, j] * math.log(r[i, j]) + (1 - x[i, j]) * math.log(1 - r[i, j]))
        v, g = bce_loss(x, r)
        assert v == pytest.approx(expected / 9, rel=1e-12)
        num = finite_difference(lambda: bce_loss(x, r)[0], [r])[0]
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(np.zeros((2, 2)), np.full((2, 3), 0.5))


class TestTemperature:
    def test_annealing_start(self):
        assert temperature(TemperatureSchedule("annealing"), 0) == 1.0

    def test_annealing_epoch_49(self):
        expected = 50.0 ** -0.55
        assert temperature(TemperatureSchedule("annealing"), 49) == pytest.approx(expected, rel=1e-12)
        assert round(expected, 4) == 0.1163

    def test_fixed(self):
        s = TemperatureSchedule("fixed", fixed_T=1.0)
        assert {temperature(s, e) for e in range(50)} == {1.0}

    def test_strictly_decreasing(self):
        s = TemperatureSchedule("annealing", eta=1.0, gamma=0.55)
        ts = [temperature(s, e) for e in range(200)]
        assert all(a > b for a, b in zip(ts, ts[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            TemperatureSchedule("fixed", fixed_T=0.0)
        with pytest.raises(ValueError):
            TemperatureSchedule("cyclic")
        with pytest.raises(ValueError):
            temperature(TemperatureSchedule(), -1)


class TestSupervisedSNNL:
    def test_two_points_same_label(self, rng):
        v, g = snnl(rng.random((2, 3)), np.array([4, 4]), 0.5)
        assert v == 0.0
        np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_identical_vectors(self):
        acts = np.tile(np.array([0.2, 0.7, 0.1]), (4, 1))
        v, _ = snnl(acts, np.array([0, 0, 1, 1]), 1.0)
        assert v == pytest.approx(math.log(3), abs=1e-12)

    @pytest.mark.parametrize("T", [0.1, 1.0, 10.0])
    @pytest.mark.parametrize("seed", range(3))
    def test_double_loop(self, T, seed):
        rng = np.random.default_rng(seed)
        acts = rng.normal(size=(4, 3))
        labels = np.array([0, 1, 0, 1]) if seed == 0 else rng.integers(0, 2, 4)
        if np.bincount(labels).max() < 2:
            labels[1] = labels[0]
        expected = snnl_double_loop(acts, lambda i, j: labels[i] == labels[j], T)
        assert snnl(acts, labels, T)[0] == pytest.approx(expected, abs=1e-10)

    def test_singleton_class_excluded(self):
        acts = np.random.default_rng(1).normal(size=(5, 4))
        labels = np.array([0, 0, 1, 1, 2])
        expected = snnl_double_loop(acts, lambda i, j: labels[i] == labels[j], 1.0)
        assert snnl(acts, labels, 1.0)[0] == pytest.approx(expected, abs=1e-12)

    def test_no_peers(self):
        with pytest.raises(UndefinedLossError):
            snnl(np.eye(3), np.array([0, 1, 2]), 1.0)

    @pytest.mark.parametrize("distance", ["cosine", "euclidean"])
    @pytest.mark.parametrize("T", [0.1, 1.0, 10.0])
    def test_gradient(self, distance, T, rng):
        acts = rng.normal(size=(6, 4))
        labels = np.array([0, 1, 0, 2, 1, 2])
        _, g = snnl(acts, labels, T, distance)
        num = finite_difference(lambda: snnl(acts, labels, T, distance)[0], [acts])
        assert relative_error([g], num) < 1e-6

    def test_euclidean_matches_double_loop(self, rng):
        acts = rng.normal(size=(5, 2))
        labels = np.array([0, 0, 1, 1, 1])
        expected = snnl_double_loop(acts, lambda i, j: labels[i] == labels[j], 2.0,
                                    dist=lambda a, b: float(np.sum((a - b) ** 2)))
        assert snnl(acts, labels, 2.0, "euclidean")[0] == pytest.approx(expected, abs=1e-12)

    def test_small_temperature_no_underflow(self):
        # positive pair is far apart; at T=1e-3 its raw weight underflows
        acts = np.array([[1.0, 0.0], [-1.0, 0.01], [0.9, 0.1], [-0.9, 0.1]])
        v, g = snnl(acts, np.array([0, 0, 1, 1]), 1e-3)
        assert math.isfinite(v) and v > 100
        assert np.all(np.isfinite(g))

    def test_rescale_invariance(self, rng):
        acts = rng.random((8, 5)) + 0.1
        labels = rng.integers(0, 3, 8)
        labels[:2] = 0
        assert abs(snnl(acts * 7.3, labels, 0.7)[0] - snnl(acts, labels, 0.7)[0]) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(1, 6), st.integers(0, 2**31 - 1),
       st.sampled_from([0.1, 1.0, 10.0]))
def test_snnl_properties(b, m, seed, T):
    rng = np.random.default_rng(seed)
    acts = rng.normal(size=(b, m))
    labels = rng.integers(0, 3, b)
    labels[1] = labels[0]
    v, g = snnl(acts, labels, T)
    assert v >= 0.0
    perm = rng.permutation(b)
    v2, g2 = snnl(acts[perm], labels[perm], T)
    assert v2 == pytest.approx(v, abs=1e-12)
    np.testing.assert_allclose(g2, g[perm], atol=1e-12)


class TestUnsupervisedSNNL:
    def test_duplicates_pair_up(self, rng):
        base = rng.random((3, 6))
        raw = np.vstack([base, base])  # row i and i+3 are twins
        nbrs = losses.nearest_input_neighbours(raw)
        np.testing.assert_array_equal(nbrs, [3, 4, 5, 0, 1, 2])

    def test_identical_acts(self, rng):
        b = 5
        acts = np.ones((b, 3))
        v, _ = snnl_unsupervised(acts, rng.random((b, 4)), 0.3)
        assert v == pytest.approx(-math.log(1.0 / (b - 1)), abs=1e-12)

    @pytest.mark.parametrize("T", [0.1, 1.0, 10.0])
    def test_double_loop(self, T):
        rng = np.random.default_rng(21)
        acts, raw = rng.normal(size=(5, 3)), rng.random((5, 7))

        def nearest(i):
            best, best_d = None, math.inf
            for j in range(5):
                if j != i and _cos_dist(raw[i], raw[j]) < best_d:
                    best, best_d = j, _cos_dist(raw[i], raw[j])
            return best

        nn_of = [nearest(i) for i in range(5)]
        expected = snnl_double_loop(acts, lambda i, j: j == nn_of[i], T)
        assert snnl_unsupervised(acts, raw, T)[0] == pytest.approx(expected, abs=1e-10)

    def test_gradient(self, rng):
        acts, raw = rng.normal(size=(6, 3)), rng.random((6, 4))
        _, g = snnl_unsupervised(acts, raw, 0.5)
        num = finite_difference(lambda: snnl_unsupervised(acts, raw, 0.5)[0], [acts])
        assert relative_error([g], num) < 1e-6

    def test_needs_three_rows(self):
        with pytest.raises(ValueError):
            snnl_unsupervised(np.ones((2, 2)), np.ones((2, 2)), 1.0)


class TestConfigs:
    def test_table_mapping(self):
        for k in range(1, 9):
            cfg = config_from_name(f"snnl-{k}")
            assert cfg.supervised == (k % 2 == 1)
            assert cfg.schedule.mode == ("fixed" if k <= 4 else "annealing")
            assert cfg.layer_mode == ("argmin" if k in (3, 4, 7, 8) else "sum")
            assert cfg.alpha == 100.0
            assert cfg.snnl_layers == (1, 2, 3, 4)
        base = config_from_name("baseline-ae")
        assert not base.uses_snnl

    def test_annealing_defaults(self):
        s = config_from_name("snnl-5").schedule
        assert (s.eta, s.gamma) == (1.0, 0.55)

    def test_unknown(self):
        with pytest.raises(ValueError):
            config_from_name("snnl-9")


def _setup(seed=0, d=5, c=3, b=6):
    rng = np.random.default_rng(seed)
    p = tiny_net(d, c, seed)
    x = rng.random((b, d))
    y = np.array([0, 1, 0, 1, 2, 2])[:b]
    return p, x, y


class TestComposite:
    def test_alpha_zero_is_reconstruction(self):
        p, x, y = _setup()
        cfg = LossConfig(alpha=0.0)
        rep, _, _ = composite_loss(cfg, nn.forward(p, x), x, y)
        assert rep.total == rep.reconstruction
        assert rep.reconstruction == bce_loss(x, nn.forward(p, x).output)[0]

    def test_baseline_has_no_snnl(self):
        p, x, _ = _setup()
        rep, _, layer_grads = composite_loss(config_from_name("baseline-ae"), nn.forward(p, x), x)
        assert rep.snnl_per_layer == [] and layer_grads == {}
        assert rep.total == rep.reconstruction

    def test_single_layer_argmin_equals_sum(self):
        p, x, y = _setup()
        trace = nn.forward(p, x)
        a = composite_loss(LossConfig(layer_mode="argmin", snnl_layers=(4,)), trace, x, y)
        s = composite_loss(LossConfig(layer_mode="sum", snnl_layers=(4,)), trace, x, y)
        assert a[0].total == s[0].total
        np.testing.assert_array_equal(a[2][4], s[2][4])
        assert a[0].chosen_layer == 4

    @pytest.mark.parametrize("name", losses.MODEL_NAMES)
    def test_report_reconstructs(self, name):
        p, x, y = _setup(3)
        rep, _, _ = composite_loss(config_from_name(name), nn.forward(p, x), x, y, epoch=7)
        alpha = config_from_name(name).alpha
        assert rep.total == pytest.approx(rep.reconstruction + alpha * rep.snnl, rel=1e-12)
        if rep.snnl_per_layer:
            vals = rep.snnl_per_layer
            if config_from_name(name).layer_mode == "argmin":
                assert rep.snnl == min(vals) <= np.mean(vals) <= max(vals)
                assert rep.chosen_layer == (1, 2, 3, 4)[int(np.argmin(vals))]
            else:
                assert rep.snnl == pytest.approx(sum(vals))

    def test_temperature_follows_epoch(self):
        p, x, y = _setup()
        rep, _, _ = composite_loss(config_from_name("snnl-5"), nn.forward(p, x), x, y, epoch=49)
        assert rep.temperature_used == pytest.approx(50 ** -0.55)

    def test_supervised_needs_labels(self):
        p, x, _ = _setup()
        with pytest.raises(ValueError):
            composite_loss(config_from_name("snnl-1"), nn.forward(p, x), x, None)

    def test_end_to_end_gradient_sum_mode(self):
        p, x, y = _setup(5, b=4)
        y = y[:4]
        cfg = config_from_name("snnl-1")

        def loss():
            return composite_loss(cfg, nn.forward(p, x), x, y)[0].total

        trace = nn.forward(p, x)
        _, og, lg = composite_loss(cfg, trace, x, y)
        analytic = nn.backward(p, trace, og, lg).tensors()
        assert relative_error(analytic, finite_difference(loss, p.tensors())) < 1e-4
