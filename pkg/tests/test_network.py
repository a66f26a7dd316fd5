"""Network forward/backward tests, including finite-difference gradient checks."""

import numpy as np
import pytest

from blindsep.embedding import affinity_loss, affinity_loss_grad, normalize_rows
from blindsep.network import (
    Adam,
    NetworkParameters,
    backward,
    forward,
    forward_cached,
    init_params,
    make_input,
)


def small_net(rng, n_freq=6, embed_dim=3, hidden=4, n_speakers=0, ivec_dim=0):
    return init_params(rng, n_freq=n_freq, embed_dim=embed_dim, hidden=hidden,
                       n_layers=2, n_speakers=n_speakers, ivec_dim=ivec_dim)


def random_targets(rng, n, c=2):
    y = np.zeros((n, c))
    y[np.arange(n), rng.integers(0, c, size=n)] = 1.0
    return y


class TestForward:
    def test_unit_rows(self):
        rng = np.random.default_rng(0)
        params = small_net(rng)
        feats = rng.standard_normal((7, 6))
        v = forward(params, feats)
        assert v.shape == (7 * 6, 3)
        assert np.allclose(np.sum(v * v, axis=1), 1.0, atol=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        params = small_net(rng)
        feats = rng.standard_normal((5, 6))
        np.testing.assert_array_equal(forward(params, feats), forward(params, feats))

    def test_input_width_with_ivectors(self):
        # F=256, C=2, ivec_dim=10 -> per-frame input width 276
        rng = np.random.default_rng(2)
        params = init_params(rng, n_freq=256, embed_dim=20, hidden=8,
                             n_layers=2, n_speakers=2, ivec_dim=10)
        assert params.input_dim == 276
        feats = rng.standard_normal((3, 256))
        ivecs = rng.standard_normal((2, 10))
        x = make_input(feats, ivecs)
        assert x.shape == (3, 276)
        # the i-vector block is constant across frames
        assert np.all(x[0, 256:] == x[2, 256:])
        v = forward(params, feats, ivecs)
        assert v.shape == (3 * 256, 20)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(3)
        params = small_net(rng)
        with pytest.raises(ValueError, match="dimension mismatch"):
            forward(params, rng.standard_normal((4, 9)))


class TestGradients:
    def analytic_grads(self, params, x, y, keep):
        pre, caches = forward_cached(params, x)
        t_len = x.shape[0]
        u = pre[:, 0, :].reshape(t_len * params.n_freq, params.embed_dim)
        du = affinity_loss_grad(u, y, keep)
        dpre = du.reshape(t_len, 1, params.output_dim)
        return backward(params, caches, dpre)

    def loss_of(self, params, x, y, keep):
        pre, _ = forward_cached(params, x)
        t_len = x.shape[0]
        u = pre[:, 0, :].reshape(t_len * params.n_freq, params.embed_dim)
        return affinity_loss(normalize_rows(u), y, keep)

    def test_all_tensors_match_finite_differences(self):
        rng = np.random.default_rng(4)
        params = small_net(rng, n_freq=5, embed_dim=3, hidden=4,
                           n_speakers=2, ivec_dim=2)
        t_len = 6
        feats = rng.standard_normal((t_len, 5))
        ivecs = rng.standard_normal((2, 2))
        x = make_input(feats, ivecs)[:, None, :]
        n = t_len * 5
        y = random_targets(rng, n)
        keep = rng.random(n) > 0.2

        grads = self.analytic_grads(params, x, y, keep)
        step = 1e-5
        for name, tensor in params.tensors.items():
            flat = tensor.ravel()
            idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up = self.loss_of(params, x, y, keep)
                flat[i] = orig - step
                dn = self.loss_of(params, x, y, keep)
                flat[i] = orig
                fd = (up - dn) / (2 * step)
                got = grads[name].ravel()[i]
                assert got == pytest.approx(fd, rel=1e-4, abs=1e-7), name

    def test_batched_matches_sum_of_singles(self):
        rng = np.random.default_rng(5)
        params = small_net(rng, n_freq=4, embed_dim=2, hidden=3)
        t_len, batch = 5, 3
        x = rng.standard_normal((t_len, batch, 4))
        n = t_len * 4
        ys = [random_targets(rng, n) for _ in range(batch)]

        pre, caches = forward_cached(params, x)
        dpre = np.zeros_like(pre)
        for b in range(batch):
            u = pre[:, b, :].reshape(n, 2)
            dpre[:, b, :] = affinity_loss_grad(u, ys[b]).reshape(t_len, -1)
        grads_batch = backward(params, caches, dpre)

        total = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        for b in range(batch):
            xb = x[:, b : b + 1, :]
            pre_b, caches_b = forward_cached(params, xb)
            u = pre_b[:, 0, :].reshape(n, 2)
            dpre_b = affinity_loss_grad(u, ys[b]).reshape(t_len, 1, -1)
            for k, v in backward(params, caches_b, dpre_b).items():
                total[k] += v
        for k in total:
            np.testing.assert_allclose(grads_batch[k], total[k], rtol=1e-9, atol=1e-10)


class TestAdam:
    def test_descends_on_quadratic(self):
        tensors = {"w": np.array([5.0, -3.0])}
        opt = Adam(tensors, lr=0.1)
        for _ in range(500):
            opt.step(tensors, {"w": 2.0 * tensors["w"]})
        assert np.max(np.abs(tensors["w"])) < 1e-3

    def test_snapshot_restore_roundtrip(self):
        rng = np.random.default_rng(6)
        tensors = {"w": rng.standard_normal(4)}
        opt = Adam(tensors, lr=0.01)
        opt.step(tensors, {"w": rng.standard_normal(4)})
        snap = opt.snapshot()
        before = {k: v.copy() for k, v in opt.m.items()}
        opt.step(tensors, {"w": rng.standard_normal(4)})
        opt.restore(snap)
        assert opt.t == 1
        np.testing.assert_array_equal(opt.m["w"], before["w"])

    def test_first_step_size_is_lr(self):
        # bias-corrected first step moves by ~lr regardless of gradient scale
        tensors = {"w": np.zeros(1)}
        opt = Adam(tensors, lr=1e-3)
        opt.step(tensors, {"w": np.array([123.0])})
        assert tensors["w"][0] == pytest.approx(-1e-3, rel=1e-6)


class TestParameterCopy:
    def test_copy_is_deep(self):
        rng = np.random.default_rng(7)
        params = small_net(rng)
        clone = params.copy()
        clone.tensors["out_b"][0] = 99.0
        assert params.tensors["out_b"][0] != 99.0
