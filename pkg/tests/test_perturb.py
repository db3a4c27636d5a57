"""Perturbed predictor: sign streams, averaging, loss values and gradients."""

import numpy as np
import pytest

from gapweight.errors import ConfigurationError, DomainError
from gapweight.net import init_params
from gapweight.perturb import (
    PredictorConfig,
    averaged_loss,
    averaged_loss_grad,
    averaged_prediction,
    default_num_draws,
    kl_loss_prob,
    kl_loss_raw,
    make_perturbations,
    perturbed_output,
    sigmoid,
)


def make_instance(seed, d=5, m=16, L=2, displace=0.1):
    rng = np.random.default_rng(seed)
    snap = init_params(d, m, L, 1.0, seed=seed)
    theta = snap.theta0.copy()
    theta.flat += displace * rng.standard_normal(theta.dims.p)
    x = rng.standard_normal(d)
    x /= np.linalg.norm(x)
    return snap, theta, x, rng


class TestPerturbationSet:
    def test_default_draw_count(self):
        """max(ceil(8 log m), 16): 37 at m=100, floor 16 for narrow nets."""
        assert default_num_draws(100) == 37
        assert default_num_draws(2) == 16
        assert default_num_draws(1024) == 56

    def test_same_seed_same_streams(self):
        a = make_perturbations(99, S=4, p=64, c_p=1.0)
        b = make_perturbations(99, S=4, p=64, c_p=1.0)
        for s in range(4):
            np.testing.assert_array_equal(a.draw(s), b.draw(s))

    def test_draws_are_signs(self):
        perts = make_perturbations(1, S=3, p=1000, c_p=1.0)
        for s in range(3):
            assert set(np.unique(perts.draw(s))) == {-1.0, 1.0}

    def test_draw_regeneration_is_stable(self):
        """Repeated materialization of the same draw is bit-identical."""
        perts = make_perturbations(7, S=2, p=512, c_p=0.5)
        np.testing.assert_array_equal(perts.draw(1), perts.draw(1))

    def test_empirical_mean_of_long_stream(self):
        """CLT gate: mean of 1e6 signs lies within 3/sqrt(p) = 0.003 < 0.004."""
        perts = make_perturbations(5, S=1, p=10**6, c_p=1.0)
        mean = float(np.mean(perts.draw(0)))
        assert -0.004 <= mean <= 0.004

    def test_dot_all_matches_per_draw(self):
        rng = np.random.default_rng(3)
        perts = make_perturbations(11, S=5, p=200, c_p=1.0)
        vec = rng.standard_normal(200)
        expected = np.array([perts.draw(s) @ vec for s in range(5)])
        np.testing.assert_allclose(perts.dot_all(vec), expected, atol=1e-12)

    def test_weighted_sum_matches_per_draw(self):
        rng = np.random.default_rng(4)
        perts = make_perturbations(12, S=5, p=200, c_p=1.0)
        w = rng.standard_normal(5)
        expected = sum(w[s] * perts.draw(s) for s in range(5))
        np.testing.assert_allclose(perts.weighted_sum(w), expected, atol=1e-12)

    def test_invalid_sizes(self):
        with pytest.raises(ConfigurationError):
            make_perturbations(0, S=0, p=4, c_p=1.0)
        with pytest.raises(ConfigurationError):
            make_perturbations(0, S=2, p=0, c_p=1.0)


class TestPerturbedOutput:
    def test_vanishes_at_initialization(self):
        """theta = theta0 makes the ridge term zero for every draw."""
        snap, _, x, _ = make_instance(21)
        from gapweight.net import forward

        perts = make_perturbations(2, S=6, p=snap.theta0.dims.p, c_p=3.0)
        f = forward(snap.theta0, x)
        for s in range(6):
            assert perturbed_output(snap.theta0, snap, x, perts.draw(s), 3.0) == f

    def test_antithetic_pair_recovers_f(self):
        """(f_tilde(eps) + f_tilde(-eps)) / 2 = f, by linearity in eps."""
        from gapweight.net import forward

        for seed in range(30):
            snap, theta, x, _ = make_instance(seed)
            perts = make_perturbations(seed + 1000, S=1, p=theta.dims.p, c_p=1.7)
            eps = perts.draw(0)
            avg = 0.5 * (
                perturbed_output(theta, snap, x, eps, 1.7)
                + perturbed_output(theta, snap, x, -eps, 1.7)
            )
            assert avg == pytest.approx(forward(theta, x), abs=1e-12)

    def test_zero_perturbation_constant(self):
        from gapweight.net import forward

        snap, theta, x, _ = make_instance(33)
        perts = make_perturbations(8, S=2, p=theta.dims.p, c_p=0.0)
        for s in range(2):
            assert perturbed_output(theta, snap, x, perts.draw(s), 0.0) == forward(theta, x)


class TestAveragedPrediction:
    def test_single_draw_equals_perturbed_output(self):
        snap, theta, x, _ = make_instance(40)
        cfg = PredictorConfig(loss_kind="square", c_p=1.0, S=1)
        perts = make_perturbations(9, S=1, p=theta.dims.p, c_p=cfg.c_p)
        expected = perturbed_output(theta, snap, x, perts.draw(0), cfg.c_p)
        assert averaged_prediction(theta, snap, x, perts, cfg) == pytest.approx(expected, abs=1e-14)

    def test_kl_mode_at_initialization(self):
        """All draws coincide at theta0, so the KL prediction is sigmoid(f(theta0; x))."""
        from gapweight.net import forward

        snap, _, x, _ = make_instance(41)
        cfg = PredictorConfig(loss_kind="kl", c_p=2.0, S=5)
        perts = make_perturbations(10, S=5, p=snap.theta0.dims.p, c_p=cfg.c_p)
        assert averaged_prediction(snap.theta0, snap, x, perts, cfg) == pytest.approx(
            sigmoid(forward(snap.theta0, x)), abs=1e-15
        )

    def test_mean_of_individual_outputs(self):
        """Oracle: direct summation of the 8 per-draw outputs."""
        snap, theta, x, _ = make_instance(42)
        cfg = PredictorConfig(loss_kind="square", c_p=0.8, S=8)
        perts = make_perturbations(11, S=8, p=theta.dims.p, c_p=cfg.c_p)
        by_hand = np.mean(
            [perturbed_output(theta, snap, x, perts.draw(s), cfg.c_p) for s in range(8)]
        )
        assert averaged_prediction(theta, snap, x, perts, cfg) == pytest.approx(by_hand, abs=1e-14)


class TestAveragedLossGrad:
    def test_square_zero_at_exact_fit(self):
        from gapweight.net import forward

        snap, _, x, _ = make_instance(50)
        cfg = PredictorConfig(loss_kind="square", c_p=1.0, S=4)
        perts = make_perturbations(12, S=4, p=snap.theta0.dims.p, c_p=cfg.c_p)
        y = forward(snap.theta0, x)
        loss, grad = averaged_loss_grad(snap.theta0, snap, x, y, perts, cfg)
        assert loss == 0.0
        assert grad.norm() == 0.0

    def test_kl_zero_at_matching_probability(self):
        from gapweight.net import forward

        snap, _, x, _ = make_instance(51)
        cfg = PredictorConfig(loss_kind="kl", c_p=1.0, S=4)
        perts = make_perturbations(13, S=4, p=snap.theta0.dims.p, c_p=cfg.c_p)
        y = float(sigmoid(forward(snap.theta0, x)))
        loss, grad = averaged_loss_grad(snap.theta0, snap, x, y, perts, cfg)
        assert loss == pytest.approx(0.0, abs=1e-15)
        assert grad.norm() == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("kind", ["square", "kl"])
    def test_finite_difference_oracle(self, kind):
        """Central differences of the averaged loss match the gradient to 1e-5."""
        rng = np.random.default_rng(1234)
        for trial in range(5):
            snap, theta, x, _ = make_instance(60 + trial, m=16, L=2)
            cfg = PredictorConfig(loss_kind=kind, c_p=1.0, S=4)
            perts = make_perturbations(100 + trial, S=4, p=theta.dims.p, c_p=cfg.c_p)
            y = float(rng.uniform(0.1, 0.9))
            _, grad = averaged_loss_grad(theta, snap, x, y, perts, cfg)
            h = 1e-6
            idx = rng.choice(theta.dims.p, size=60, replace=False)
            for j in idx:
                tp, tm = theta.copy(), theta.copy()
                tp.flat[j] += h
                tm.flat[j] -= h
                fd = (
                    averaged_loss(tp, snap, x, y, perts, cfg)
                    - averaged_loss(tm, snap, x, y, perts, cfg)
                ) / (2 * h)
                assert grad.flat[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_kl_label_outside_unit_interval_raises(self):
        snap, theta, x, _ = make_instance(70)
        cfg = PredictorConfig(loss_kind="kl", c_p=1.0, S=2)
        perts = make_perturbations(14, S=2, p=theta.dims.p, c_p=cfg.c_p)
        with pytest.raises(DomainError):
            averaged_loss_grad(theta, snap, x, float("nan"), perts, cfg)


class TestLossStructure:
    @pytest.mark.parametrize("kind", ["square", "kl"])
    def test_jensen_transfer(self, kind):
        """Loss of the averaged prediction never exceeds the averaged loss."""
        rng = np.random.default_rng(8)
        snap, theta, x, _ = make_instance(80, m=12)
        cfg = PredictorConfig(loss_kind=kind, c_p=1.0, S=6)
        violations = 0
        for trial in range(1000):
            perts = make_perturbations(trial, S=6, p=theta.dims.p, c_p=cfg.c_p)
            y = float(rng.uniform(0.05, 0.95))
            pred = averaged_prediction(theta, snap, x, perts, cfg)
            avg_loss = averaged_loss(theta, snap, x, y, perts, cfg)
            direct = (
                float(kl_loss_prob(y, pred)) if kind == "kl" else 0.5 * (y - pred) ** 2
            )
            if direct > avg_loss + 1e-12:
                violations += 1
        assert violations == 0

    def test_kl_derivative_identity(self):
        """d/d raw of the KL loss equals sigmoid(raw) - y (checked numerically)."""
        rng = np.random.default_rng(9)
        for _ in range(200):
            y = float(rng.uniform(0.01, 0.99))
            raw = float(rng.uniform(-4, 4))
            h = 1e-6
            numeric = (kl_loss_raw(y, raw + h) - kl_loss_raw(y, raw - h)) / (2 * h)
            assert numeric == pytest.approx(float(sigmoid(raw)) - y, abs=1e-6)

    def test_kl_lipschitz_witness(self):
        """|sigmoid(raw) - y| <= 2 everywhere (in fact <= 1 here)."""
        rng = np.random.default_rng(10)
        raws = rng.uniform(-50, 50, size=5000)
        ys = rng.uniform(0, 1, size=5000)
        assert np.max(np.abs(sigmoid(raws) - ys)) <= 2.0

    def test_square_loss_derivative_bounded_by_output_range(self):
        """|l'| = |f_tilde - y| <= |f_tilde| + 1 for labels in [0, 1]."""
        snap, theta, x, _ = make_instance(90)
        cfg = PredictorConfig(loss_kind="square", c_p=1.0, S=3)
        perts = make_perturbations(15, S=3, p=theta.dims.p, c_p=cfg.c_p)
        outs = [perturbed_output(theta, snap, x, perts.draw(s), cfg.c_p) for s in range(3)]
        for y in (0.0, 0.5, 1.0):
            for out in outs:
                assert abs(out - y) <= abs(out) + 1.0
