"""Network core: initialization law, forward recurrence, exact gradients, flat ops."""

import numpy as np
import pytest

from gapweight.errors import ConfigurationError, ShapeMismatchError
from gapweight.net import (
    NetDims,
    NetworkParams,
    backward,
    forward,
    init_params,
    sigma0_for_width,
)


def reference_forward(params, x):
    """Straight-line re-implementation of the forward recurrence (test oracle)."""
    d, m, L = params.dims.d, params.dims.m, params.dims.L
    h = np.asarray(x, dtype=np.float64)
    for l in range(1, L + 1):
        scale = 1.0 / np.sqrt(d if l == 1 else m)
        h = np.tanh(scale * (params.hidden(l) @ h))
    return float(params.v @ h) / np.sqrt(m)


def random_instance(rng, d=6, m=16, L=2, sigma1=1.0):
    snap = init_params(d, m, L, sigma1, seed=int(rng.integers(1 << 31)))
    theta = snap.theta0.copy()
    theta.flat += 0.05 * rng.standard_normal(theta.dims.p)
    x = rng.standard_normal(d)
    x /= np.linalg.norm(x)
    return snap, theta, x


class TestInit:
    def test_sigma0_formula_value(self):
        """At m=100, sigma1=1 the entry std is 1 / (2 (1 + sqrt(log 100)/sqrt(200)))."""
        expected = 1.0 / (2.0 * (1.0 + np.sqrt(np.log(100.0)) / np.sqrt(200.0)))
        assert sigma0_for_width(100, 1.0) == pytest.approx(expected, abs=0)
        assert sigma0_for_width(100, 1.0) == pytest.approx(0.434125, abs=5e-6)

    def test_same_seed_bit_identical(self):
        a = init_params(4, 32, 2, 1.0, seed=123)
        b = init_params(4, 32, 2, 1.0, seed=123)
        assert np.array_equal(a.theta0.flat, b.theta0.flat)

    def test_different_seed_differs(self):
        a = init_params(4, 32, 2, 1.0, seed=123)
        b = init_params(4, 32, 2, 1.0, seed=124)
        assert not np.array_equal(a.theta0.flat, b.theta0.flat)

    @pytest.mark.parametrize("d,m,L,seed", [(1, 1, 1, 0), (3, 7, 1, 5), (8, 64, 3, 99)])
    def test_output_vector_unit_norm(self, d, m, L, seed):
        snap = init_params(d, m, L, 1.0, seed=seed)
        assert abs(np.linalg.norm(snap.theta0.v) - 1.0) <= 1e-12

    def test_hidden_entry_scale(self):
        """Empirical std of hidden entries matches sigma0 to sampling accuracy."""
        snap = init_params(64, 256, 2, 1.0, seed=7)
        entries = np.concatenate([snap.theta0.hidden(1).ravel(), snap.theta0.hidden(2).ravel()])
        sigma0 = sigma0_for_width(256, 1.0)
        assert np.std(entries) == pytest.approx(sigma0, rel=0.02)

    def test_invalid_dims_rejected(self):
        with pytest.raises(ConfigurationError):
            init_params(0, 4, 1, 1.0, seed=1)
        with pytest.raises(ConfigurationError):
            init_params(4, 4, 1, -1.0, seed=1)

    def test_snapshot_is_frozen(self):
        snap = init_params(4, 8, 1, 1.0, seed=3)
        with pytest.raises(ValueError):
            snap.theta0.flat[0] = 42.0

    def test_parameter_count(self):
        dims = NetDims(5, 11, 3)
        assert dims.p == 11 * 5 + 2 * 11 * 11 + 11


class TestForward:
    def test_zero_output_layer(self):
        snap = init_params(4, 8, 2, 1.0, seed=11)
        theta = snap.theta0.copy()
        theta.v[:] = 0.0
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal(4)
            x /= np.linalg.norm(x)
            assert forward(theta, x) == 0.0

    def test_minimal_net_zero_weights(self):
        """d=m=L=1 with W=0, v=1: f = tanh(0) / 1 = 0."""
        theta = NetworkParams(np.array([0.0, 1.0]), NetDims(1, 1, 1))
        assert forward(theta, np.array([0.7])) == 0.0

    def test_matches_reference_implementation(self):
        """Oracle: an independent straight-line recurrence agrees to 1e-12."""
        rng = np.random.default_rng(42)
        for _ in range(20):
            _, theta, x = random_instance(rng, d=6, m=32, L=3)
            assert forward(theta, x) == pytest.approx(reference_forward(theta, x), abs=1e-12)

    def test_linearity_in_output_vector(self):
        rng = np.random.default_rng(1)
        snap, theta, x = random_instance(rng)
        v1 = rng.standard_normal(theta.dims.m)
        v2 = rng.standard_normal(theta.dims.m)
        ta, tb, tc = theta.copy(), theta.copy(), theta.copy()
        ta.v[:] = v1 + v2
        tb.v[:] = v1
        tc.v[:] = v2
        assert forward(ta, x) == pytest.approx(forward(tb, x) + forward(tc, x), abs=1e-12)

    def test_dimension_mismatch(self):
        snap = init_params(4, 8, 1, 1.0, seed=2)
        with pytest.raises(ShapeMismatchError):
            forward(snap.theta0, np.zeros(5))

    def test_output_bound_inside_ball(self):
        """|f| stays below (1 + rho1) * gamma^L with gamma = sigma1 + rho/sqrt(m) (tanh: phi(0)=0)."""
        rng = np.random.default_rng(9)
        d, m, L, sigma1 = 8, 64, 2, 1.0
        rho, rho1 = 2.0, 1.0
        snap = init_params(d, m, L, sigma1, seed=21)
        gamma = sigma1 + rho / np.sqrt(m)
        bound = (1.0 + rho1) * gamma**L
        for _ in range(50):
            theta = snap.theta0.copy()
            for l in range(1, L + 1):
                delta = rng.standard_normal(theta.hidden(l).shape)
                theta.hidden(l)[...] += delta * (rho * rng.random() / np.linalg.norm(delta))
            dv = rng.standard_normal(m)
            theta.v[:] += dv * (rho1 * rng.random() / np.linalg.norm(dv))
            x = rng.standard_normal(d)
            x /= np.linalg.norm(x)
            assert abs(forward(theta, x)) < bound


class TestBackward:
    def test_gradient_wrt_v_is_scaled_features(self):
        """f is linear in v, so its v-gradient equals alpha_L / sqrt(m) exactly."""
        rng = np.random.default_rng(5)
        _, theta, x = random_instance(rng, d=5, m=12, L=2)
        grad = backward(theta, x)
        h = x
        for l in range(1, 3):
            scale = 1.0 / np.sqrt(5 if l == 1 else 12)
            h = np.tanh(scale * (theta.hidden(l) @ h))
        np.testing.assert_array_equal(grad.v, h / np.sqrt(12))

    def test_zero_input_kills_first_layer(self):
        """With x = 0 and tanh (phi(0)=0), the first-layer gradient vanishes."""
        snap = init_params(4, 8, 2, 1.0, seed=17)
        grad = backward(snap.theta0, np.zeros(4))
        np.testing.assert_array_equal(grad.hidden(1), np.zeros((8, 4)))

    def test_finite_difference_oracle(self):
        """Central differences (h=1e-5) match every coordinate to 1e-5 relative."""
        rng = np.random.default_rng(77)
        _, theta, x = random_instance(rng, d=6, m=16, L=2)
        grad = backward(theta, x)
        h = 1e-5
        fd = np.empty(theta.dims.p)
        for j in range(theta.dims.p):
            tp, tm = theta.copy(), theta.copy()
            tp.flat[j] += h
            tm.flat[j] -= h
            fd[j] = (forward(tp, x) - forward(tm, x)) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(grad.flat - fd) / scale) <= 1e-5

    def test_softplus_gradient(self):
        """The alternative activation also passes a finite-difference check."""
        rng = np.random.default_rng(3)
        snap = init_params(4, 10, 2, 1.0, seed=31, activation="softplus0")
        theta = snap.theta0.copy()
        theta.flat += 0.05 * rng.standard_normal(theta.dims.p)
        x = rng.standard_normal(4)
        x /= np.linalg.norm(x)
        grad = backward(theta, x)
        h = 1e-5
        idx = rng.choice(theta.dims.p, size=40, replace=False)
        for j in idx:
            tp, tm = theta.copy(), theta.copy()
            tp.flat[j] += h
            tm.flat[j] -= h
            fd = (forward(tp, x) - forward(tm, x)) / (2 * h)
            assert grad.flat[j] == pytest.approx(fd, rel=1e-5, abs=1e-10)


class TestFlatOps:
    def test_self_distance_zero(self):
        snap = init_params(3, 6, 2, 1.0, seed=8)
        diff = snap.theta0.add_scaled(-1.0, snap.theta0)
        assert diff.norm() == 0.0

    def test_axpy_roundtrip(self):
        rng = np.random.default_rng(14)
        snap = init_params(3, 6, 2, 1.0, seed=8)
        theta = snap.theta0.copy()
        g = theta.zeros_like()
        g.flat[:] = rng.standard_normal(theta.dims.p)
        back = theta.add_scaled(1.0, g).add_scaled(-1.0, g)
        assert np.max(np.abs(back.flat - theta.flat)) <= 1e-15

    def test_layer_norms_pythagoras(self):
        rng = np.random.default_rng(15)
        snap = init_params(3, 6, 2, 1.0, seed=9)
        theta = snap.theta0.copy()
        theta.flat += rng.standard_normal(theta.dims.p)
        norms = theta.layer_norms(snapshot_ref := snap.theta0)
        total = np.linalg.norm(theta.flat - snapshot_ref.flat)
        assert np.sum(norms**2) == pytest.approx(total**2, rel=1e-12)

    def test_layout_mismatch_raises(self):
        a = init_params(3, 6, 2, 1.0, seed=1).theta0
        b = init_params(3, 7, 2, 1.0, seed=1).theta0
        with pytest.raises(ShapeMismatchError):
            a.add_scaled(1.0, b)
