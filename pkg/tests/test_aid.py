import math

import numpy as np
import pytest

from apd.aid import (
    AidConfig,
    AidParams,
    aid_forward,
    aid_forward_batch,
    bce_loss,
    distill_aid,
    featurize,
    init_params,
    kl_bernoulli,
    pac_bound,
    soften,
    train_aid,
    _backward,
    _bce_dlogit,
    _forward,
)
from apd.numkit import grad_check, make_rng
from apd.vae import TrainHyper


class TestAidConfig:
    def test_heads_divide_hidden(self):
        with pytest.raises(ValueError, match="divisible"):
            AidConfig(latent_dim=4, spectral_dim=4, layers=1, heads=3, hidden=8)

    def test_layers_floor(self):
        with pytest.raises(ValueError, match="layer"):
            AidConfig(latent_dim=4, spectral_dim=4, layers=0, heads=2, hidden=8)

    def test_threshold_range(self):
        with pytest.raises(ValueError, match="threshold"):
            AidConfig(latent_dim=4, spectral_dim=4, threshold=1.0)


class TestFeaturize:
    CFG = AidConfig(latent_dim=4, spectral_dim=3, layers=1, heads=2, hidden=8)

    def test_pass_through(self):
        fv = featurize(np.ones(4), np.ones(3), self.CFG)
        assert fv.latent.shape == (4,) and fv.spectral.shape == (3,)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="latent"):
            featurize(np.ones(3), np.ones(3), self.CFG)
        with pytest.raises(ValueError, match="spectral"):
            featurize(np.ones(4), np.ones(4), self.CFG)

    def test_zero_vectors_valid(self):
        fv = featurize(np.zeros(4), np.zeros(3), self.CFG)
        assert np.all(fv.latent == 0.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            featurize(np.array([np.nan, 0, 0, 0]), np.zeros(3), self.CFG)


class TestAidForward:
    CFG = AidConfig(latent_dim=4, spectral_dim=3, layers=2, heads=2, hidden=8)

    def _zero_params(self, out_bias=0.0):
        params = init_params(self.CFG, 0)
        zeroed = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        zeroed["out_b"] = np.array(out_bias)
        return AidParams(tensors=zeroed)

    def test_zero_params_give_half(self):
        fv = featurize(np.zeros(4), np.zeros(3), self.CFG)
        assert aid_forward(fv, self._zero_params(0.0), self.CFG) == pytest.approx(0.5)

    def test_output_bias_closed_form(self):
        fv = featurize(np.ones(4), np.ones(3), self.CFG)
        for b in (-2.0, 0.7, 3.0):
            expected = 1.0 / (1.0 + math.exp(-b))
            assert aid_forward(fv, self._zero_params(b), self.CFG) == pytest.approx(expected)

    def test_saturated_bias(self):
        fv = featurize(np.zeros(4), np.zeros(3), self.CFG)
        assert aid_forward(fv, self._zero_params(10.0), self.CFG) >= 0.9999

    def test_deterministic(self):
        rng = make_rng(0)
        params = init_params(self.CFG, 1)
        fv = featurize(rng.standard_normal(4), rng.standard_normal(3), self.CFG)
        a = aid_forward(fv, params, self.CFG)
        b = aid_forward(fv, params, self.CFG)
        assert a == b

    def test_open_interval(self):
        rng = make_rng(1)
        params = init_params(self.CFG, 2)
        for _ in range(50):
            fv = featurize(10 * rng.standard_normal(4), 10 * rng.standard_normal(3), self.CFG)
            y = aid_forward(fv, params, self.CFG)
            assert 0.0 < y < 1.0

    def test_batch_matches_single(self):
        rng = make_rng(2)
        params = init_params(self.CFG, 3)
        lat = rng.standard_normal((5, 4))
        spec = rng.standard_normal((5, 3))
        batch = aid_forward_batch(lat, spec, params, self.CFG)
        for i in range(5):
            fv = featurize(lat[i], spec[i], self.CFG)
            assert batch[i] == pytest.approx(aid_forward(fv, params, self.CFG), abs=1e-15)


class TestBceLoss:
    def test_perfect_prediction(self):
        assert bce_loss(np.array([1.0 - 1e-7]), np.array([1.0])) == pytest.approx(1e-7, rel=0.01)

    def test_half_is_ln2(self):
        assert bce_loss(np.array([0.5]), np.array([0.0])) == pytest.approx(math.log(2.0))

    def test_two_example_value(self):
        value = bce_loss(np.array([0.9, 0.1]), np.array([1.0, 0.0]))
        assert value == pytest.approx(-math.log(0.9), abs=1e-12)
        assert value == pytest.approx(0.105361, abs=1e-6)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            bce_loss(np.array([]), np.array([]))

    def test_clamp_keeps_finite(self):
        assert np.isfinite(bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0])))


class TestGradient:
    def test_composition_matches_finite_differences(self):
        # three random configurations with one and two layers
        for trial, (layers, heads, hidden) in enumerate([(1, 2, 8), (2, 2, 8), (2, 4, 12)]):
            cfg = AidConfig(latent_dim=5, spectral_dim=4, layers=layers, heads=heads, hidden=hidden)
            params = init_params(cfg, trial + 1)
            rng = make_rng(trial + 50)
            lat = rng.standard_normal((3, 5))
            spec = rng.standard_normal((3, 4))
            y = np.array([1.0, 0.0, 1.0])
            names = list(params.tensors.keys())
            shapes = [params.tensors[n].shape for n in names]
            sizes = [int(np.prod(s)) if s else 1 for s in shapes]

            def unflatten(vec):
                p = params.copy()
                off = 0
                for n, s, sz in zip(names, shapes, sizes):
                    p.tensors[n] = vec[off : off + sz].reshape(s) if s else np.array(vec[off])
                    off += sz
                return p

            theta = np.concatenate([np.atleast_1d(params.tensors[n]).ravel() for n in names])
            f = lambda v: bce_loss(_forward(lat, spec, unflatten(v), cfg)[0], y)

            def g(v):
                p = unflatten(v)
                prob, cache = _forward(lat, spec, p, cfg)
                grads = _backward(_bce_dlogit(prob, y), cache, p, cfg)
                return np.concatenate([np.atleast_1d(grads[n]).ravel() for n in names])

            assert grad_check(f, g, theta, eps=1e-5) <= 1e-5


def _separable_toy(n=60, seed=0):
    rng = make_rng(seed)
    y = (np.arange(n) % 2).astype(float)
    lat = rng.standard_normal((n, 4)) * 0.1
    lat[:, 0] += 2.0 * y - 1.0  # first coordinate carries the class
    spec = np.zeros((n, 3))
    return lat, spec, y


class TestTrainAid:
    CFG = AidConfig(latent_dim=4, spectral_dim=3, layers=1, heads=2, hidden=8)

    def test_separable_reaches_perfect_train_accuracy(self):
        lat, spec, y = _separable_toy()
        # independent check that the toy set is linearly separable
        w = np.zeros(5)
        X = np.hstack([lat, np.ones((len(y), 1))])
        for _ in range(500):
            p = 1.0 / (1.0 + np.exp(-(X @ w)))
            w -= 0.5 * X.T @ (p - y) / len(y)
        assert (((X @ w) > 0) == (y == 1)).all()

        params, _ = train_aid(lat, spec, y, self.CFG,
                              TrainHyper(lr=0.05, epochs=200, batch=16, seed=1, momentum=0.9))
        prob = aid_forward_batch(lat, spec, params, self.CFG)
        assert (((prob >= 0.5) == (y == 1))).all()

    def test_lr_zero_unchanged(self):
        lat, spec, y = _separable_toy()
        params, _ = train_aid(lat, spec, y, self.CFG, TrainHyper(lr=0.0, epochs=5, batch=16, seed=2))
        initial = init_params(self.CFG, 2)
        for name in params.tensors:
            assert np.array_equal(params.tensors[name], initial.tensors[name])

    def test_deterministic(self):
        lat, spec, y = _separable_toy()
        hyper = TrainHyper(lr=0.05, epochs=10, batch=16, seed=3)
        a, _ = train_aid(lat, spec, y, self.CFG, hyper)
        b, _ = train_aid(lat, spec, y, self.CFG, hyper)
        for name in a.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name])

    def test_single_class_rejected(self):
        lat, spec, _ = _separable_toy()
        with pytest.raises(ValueError, match="both classes"):
            train_aid(lat, spec, np.ones(len(lat)), self.CFG, TrainHyper())


class TestDistill:
    STUDENT = AidConfig(latent_dim=4, spectral_dim=3, layers=1, heads=2, hidden=8)
    TEACHER = AidConfig(latent_dim=4, spectral_dim=3, layers=2, heads=2, hidden=12)

    def test_alpha_one_matches_train_aid_bitwise(self):
        lat, spec, y = _separable_toy(n=40)
        hyper = TrainHyper(lr=0.05, epochs=8, batch=8, seed=5)
        teacher, _ = train_aid(lat, spec, y, self.TEACHER, hyper)
        plain, _ = train_aid(lat, spec, y, self.STUDENT, hyper)
        distilled, _ = distill_aid(teacher, self.TEACHER, self.STUDENT, lat, spec, y,
                                   hyper, temperature=2.0, alpha=1.0)
        for name in plain.tensors:
            assert np.array_equal(plain.tensors[name], distilled.tensors[name])

    def test_kl_identity_zero(self):
        assert kl_bernoulli(np.array([0.3]), np.array([0.3]))[0] == pytest.approx(0.0, abs=1e-15)

    def test_kl_nonnegative(self):
        rng = make_rng(0)
        p = rng.uniform(0.01, 0.99, 50)
        q = rng.uniform(0.01, 0.99, 50)
        assert np.all(kl_bernoulli(p, q) >= 0.0)

    def test_soften_t1_identity(self):
        p = np.array([0.2, 0.5, 0.9])
        assert np.allclose(soften(p, 1.0), p, atol=1e-12)

    def test_soften_flattens(self):
        p = np.array([0.9])
        assert soften(p, 4.0)[0] < p[0]
        assert soften(p, 4.0)[0] > 0.5

    def test_distillation_learns(self):
        lat, spec, y = _separable_toy(n=60)
        hyper = TrainHyper(lr=0.05, epochs=200, batch=16, seed=6, momentum=0.9)
        teacher, _ = train_aid(lat, spec, y, self.TEACHER, hyper)
        student, _ = distill_aid(teacher, self.TEACHER, self.STUDENT, lat, spec, y,
                                 hyper, temperature=2.0, alpha=0.5)
        prob = aid_forward_batch(lat, spec, student, self.STUDENT)
        assert (((prob >= 0.5) == (y == 1)).mean()) >= 0.95

    def test_parameter_validation(self):
        lat, spec, y = _separable_toy(n=20)
        teacher = init_params(self.TEACHER, 0)
        with pytest.raises(ValueError, match="temperature"):
            distill_aid(teacher, self.TEACHER, self.STUDENT, lat, spec, y,
                        TrainHyper(), temperature=0.0)
        with pytest.raises(ValueError, match="alpha"):
            distill_aid(teacher, self.TEACHER, self.STUDENT, lat, spec, y,
                        TrainHyper(), alpha=1.5)


class TestPacBound:
    def test_reference_value(self):
        bound = pac_bound(14700, 1000.0, 0.05, 0.058)
        assert bound.hoeffding == pytest.approx(0.24271, abs=1e-5)

    def test_delta_near_one_gap_vanishes(self):
        bound = pac_bound(100, 0.0, 1.0 - 1e-12, 0.2)
        assert bound.hoeffding == pytest.approx(0.2, abs=1e-6)

    def test_huge_sample_small_gap(self):
        bound = pac_bound(10**12, 1000.0, 0.05, 0.0)
        assert bound.hoeffding <= 2.3e-5

    def test_linear_variant(self):
        bound = pac_bound(14700, 1000.0, 0.05, 0.058)
        assert bound.linear == pytest.approx((1000.0 + math.log(20.0)) / 14700.0, rel=1e-12)

    def test_monotonicity(self):
        ms = np.linspace(10, 10_000, 100).astype(int)
        values = [pac_bound(int(m), 50.0, 0.1, 0.1).hoeffding for m in ms]
        assert all(a >= b for a, b in zip(values, values[1:]))
        lnhs = np.linspace(0.0, 500.0, 100)
        values = [pac_bound(1000, lh, 0.1, 0.1).hoeffding for lh in lnhs]
        assert all(a <= b for a, b in zip(values, values[1:]))
        deltas = np.linspace(0.01, 0.99, 100)
        values = [pac_bound(1000, 50.0, d, 0.1).hoeffding for d in deltas]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_invalid_delta(self):
        with pytest.raises(ValueError, match="delta"):
            pac_bound(10, 1.0, 0.0, 0.1)
        with pytest.raises(ValueError, match="delta"):
            pac_bound(10, 1.0, 1.0, 0.1)
