"""Tests for optc.nn: forward/backward kernels, AdamW, schedule, checker."""

import numpy as np
import pytest

from optc import nn


def set_params(mlp, pd):
    for name, arr in mlp.named_params().items():
        arr[...] = pd[name]


class TestMlpForward:
    def test_zero_net_outputs_final_bias(self):
        mlp = nn.init_mlp((3, 4, 2), np.random.default_rng(0))
        for w in mlp.weights:
            w[...] = 0.0
        mlp.biases[-1][...] = [1.5, -2.5]
        # running stats (0, 1): zero activations stay zero through norm and GELU
        out, _ = nn.mlp_forward(mlp, np.random.default_rng(1).normal(size=(5, 3)), mode="eval")
        np.testing.assert_allclose(out, np.tile([1.5, -2.5], (5, 1)))

    def test_identity_single_linear_layer(self):
        mlp = nn.init_mlp((3, 3), np.random.default_rng(0))
        mlp.weights[0][...] = np.eye(3)
        mlp.biases[0][...] = 0.0
        x = np.random.default_rng(2).normal(size=(4, 3))
        out, _ = nn.mlp_forward(mlp, x, mode="eval")
        np.testing.assert_array_equal(out, x)

    def test_matches_straight_line_reference(self):
        rng = np.random.default_rng(3)
        mlp = nn.init_mlp((4, 6, 5, 2), rng)
        for bn in mlp.norms:
            bn.gain[...] = rng.uniform(0.5, 1.5, size=bn.gain.shape)
            bn.shift[...] = rng.normal(size=bn.shift.shape)
        x = rng.normal(size=(8, 4))
        out, _ = nn.mlp_forward(mlp, x, mode="train", update_running=False)

        # independently coded forward pass
        h = x
        for i in range(2):
            z = h @ mlp.weights[i] + mlp.biases[i]
            zh = (z - z.mean(0)) / np.sqrt(z.var(0) + mlp.norms[i].eps)
            u = mlp.norms[i].gain * zh + mlp.norms[i].shift
            c = np.sqrt(2 / np.pi)
            h = 0.5 * u * (1 + np.tanh(c * (u + 0.044715 * u**3)))
        ref = h @ mlp.weights[2] + mlp.biases[2]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_eval_mode_leaves_running_stats(self):
        mlp = nn.init_mlp((3, 4, 2), np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(6, 3))
        before = [bn.running_mean.copy() for bn in mlp.norms]
        out1, _ = nn.mlp_forward(mlp, x, mode="eval")
        out2, _ = nn.mlp_forward(mlp, x, mode="eval")
        np.testing.assert_array_equal(out1, out2)
        for bn, b in zip(mlp.norms, before):
            np.testing.assert_array_equal(bn.running_mean, b)

    def test_train_mode_updates_running_stats(self):
        mlp = nn.init_mlp((3, 4, 2), np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(6, 3))
        nn.mlp_forward(mlp, x, mode="train")
        assert not np.allclose(mlp.norms[0].running_mean, 0.0)

    def test_rejects_small_train_batch(self):
        mlp = nn.init_mlp((3, 4, 2), np.random.default_rng(0))
        with pytest.raises(ValueError, match="batch"):
            nn.mlp_forward(mlp, np.zeros((1, 3)), mode="train")

    def test_rejects_width_mismatch(self):
        mlp = nn.init_mlp((3, 2), np.random.default_rng(0))
        with pytest.raises(ValueError):
            nn.mlp_forward(mlp, np.zeros((4, 5)))


class TestMlpBackward:
    def test_zero_upstream_gives_zero_grads(self):
        mlp = nn.init_mlp((3, 4, 2), np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(5, 3))
        out, cache = nn.mlp_forward(mlp, x, mode="train")
        grads, dx = nn.mlp_backward(mlp, cache, np.zeros_like(out))
        assert all(np.all(g == 0) for g in grads.values())
        assert np.all(dx == 0)

    def test_single_linear_layer_closed_form(self):
        mlp = nn.init_mlp((3, 2), np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(5, 3))
        out, cache = nn.mlp_forward(mlp, x, mode="train")
        grads, _ = nn.mlp_backward(mlp, cache, np.ones_like(out))
        # L = sum(out): dW = column sums of x outer ones, db = batch size
        np.testing.assert_allclose(grads["layers.0.weight"], np.tile(x.sum(0)[:, None], (1, 2)))
        np.testing.assert_allclose(grads["layers.0.bias"], [5.0, 5.0])

    def test_finite_differences_many_seeds(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            mlp = nn.init_mlp((4, 7, 6, 3), rng)
            x = rng.normal(size=(9, 4))
            cvec = rng.normal(size=(9, 3))

            def f(pd):
                set_params(mlp, pd)
                out, cache = nn.mlp_forward(mlp, x, mode="train", update_running=False)
                grads, _ = nn.mlp_backward(mlp, cache, cvec)
                return float((out * cvec).sum()), grads

            err = nn.check_param_gradients(
                f, {k: v.copy() for k, v in mlp.named_params().items()}
            )
            worst = max(worst, err)
        assert worst < 1e-6

    def test_input_gradient(self):
        rng = np.random.default_rng(33)
        mlp = nn.init_mlp((4, 5, 2), rng)
        x0 = rng.normal(size=(6, 4))
        cvec = rng.normal(size=(6, 2))

        def f(v):
            out, cache = nn.mlp_forward(mlp, v.reshape(6, 4), mode="train", update_running=False)
            _, dx = nn.mlp_backward(mlp, cache, cvec)
            return float((out * cvec).sum()), dx.ravel()

        assert nn.grad_check(f, x0.ravel().copy()) < 1e-6

    def test_rejects_eval_cache(self):
        mlp = nn.init_mlp((3, 4, 2), np.random.default_rng(0))
        out, cache = nn.mlp_forward(mlp, np.zeros((4, 3)), mode="eval")
        with pytest.raises(ValueError, match="train-mode"):
            nn.mlp_backward(mlp, cache, np.zeros_like(out))


class TestAdamW:
    def test_zero_grad_zero_decay_is_fixed_point(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        state = nn.init_adam(params, weight_decay=0.0)
        before = params["w"].copy()
        for _ in range(5):
            nn.adamw_step(params, {"w": np.zeros(3)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], before)

    def test_first_step_is_bias_corrected_sign_step(self):
        params = {"w": np.array([0.0])}
        state = nn.init_adam(params, weight_decay=0.0)
        nn.adamw_step(params, {"w": np.array([0.37])}, state, lr=0.01)
        # m/(1-b1) = g, sqrt(v/(1-b2)) = |g| -> update = lr * g/(|g| + eps)
        np.testing.assert_allclose(params["w"], [-0.01], rtol=1e-6)

    def test_elementwise_independence(self):
        a = {"w": np.array([1.0])}
        b = {"w": np.array([-0.5])}
        both = {"w": np.array([1.0, -0.5])}
        sa, sb = nn.init_adam(a), nn.init_adam(b)
        sboth = nn.init_adam(both)
        rng = np.random.default_rng(0)
        for _ in range(7):
            g = rng.normal(size=2)
            nn.adamw_step(a, {"w": g[:1]}, sa, 0.05)
            nn.adamw_step(b, {"w": g[1:]}, sb, 0.05)
            nn.adamw_step(both, {"w": g}, sboth, 0.05)
        np.testing.assert_array_equal(both["w"], np.concatenate([a["w"], b["w"]]))

    def test_decay_shrinks_without_gradient(self):
        params = {"w": np.array([2.0])}
        state = nn.init_adam(params, weight_decay=0.1)
        nn.adamw_step(params, {"w": np.zeros(1)}, state, lr=0.5)
        np.testing.assert_allclose(params["w"], [2.0 * (1 - 0.5 * 0.1)])

    def test_step_counter(self):
        params = {"w": np.zeros(1)}
        state = nn.init_adam(params)
        nn.adamw_step(params, {"w": np.ones(1)}, state, 0.1)
        nn.adamw_step(params, {"w": np.ones(1)}, state, 0.1)
        assert state.step == 2


class TestOneCycle:
    def test_peak_is_exactly_max_lr(self):
        assert nn.one_cycle_lr(100, 1000, 0.006) == pytest.approx(0.006, abs=0)

    def test_initial_value(self):
        assert nn.one_cycle_lr(0, 1000, 0.006, div_factor=25.0) == pytest.approx(0.00024)

    def test_final_value(self):
        assert nn.one_cycle_lr(1000, 1000, 0.006, final_div_factor=1000.0) == pytest.approx(6e-6)

    def test_never_exceeds_max(self):
        lrs = [nn.one_cycle_lr(s, 500, 0.006) for s in range(501)]
        assert max(lrs) <= 0.006 + 1e-15

    def test_continuous_at_warmup_boundary(self):
        lo = nn.one_cycle_lr(99.999, 1000, 0.006)
        hi = nn.one_cycle_lr(100.001, 1000, 0.006)
        assert abs(hi - lo) < 1e-6

    @pytest.mark.parametrize("step,total", [(-1, 10), (11, 10)])
    def test_rejects_out_of_range(self, step, total):
        with pytest.raises(ValueError):
            nn.one_cycle_lr(step, total, 0.006)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = nn.softmax_cross_entropy(np.zeros((4, 5)), np.array([0, 1, 2, 3]))
        assert loss == pytest.approx(np.log(5), abs=1e-12)

    def test_saturated_true_class(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 30.0
        loss, _ = nn.softmax_cross_entropy(logits, np.array([2]))
        assert loss < 1e-9

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        logits = rng.normal(size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        base, _ = nn.softmax_cross_entropy(logits, labels)
        shifted, _ = nn.softmax_cross_entropy(logits + rng.normal(size=(6, 1)), labels)
        assert abs(base - shifted) < 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, size=5)

        def f(v):
            loss, grad = nn.softmax_cross_entropy(v.reshape(5, 4), labels)
            return loss, grad.ravel()

        assert nn.grad_check(f, logits.ravel().copy()) < 1e-6

    def test_rejects_bad_label(self):
        with pytest.raises(ValueError):
            nn.softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


class TestGradCheck:
    def test_quadratic_is_exact(self):
        def f(x):
            return float(x[0] ** 2), np.array([2.0 * x[0]])

        assert nn.grad_check(f, np.array([3.0])) < 1e-10

    def test_flags_wrong_gradient(self):
        def f(x):
            return float(x[0] ** 2), np.array([4.0 * x[0]])  # 2x too large

        err = nn.grad_check(f, np.array([3.0]))
        assert err == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_rejects_nonpositive_h(self):
        with pytest.raises(ValueError):
            nn.grad_check(lambda x: (0.0, x), np.zeros(1), h=0.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        tensors = {
            "a.weight": rng.normal(size=(3, 4)),
            "b.bias": rng.normal(size=7),
            "scalarish": rng.normal(size=(1,)),
        }
        path = tmp_path / "test.ckpt"
        nn.save_checkpoint(path, tensors, meta={"kind": "test", "n": 3})
        loaded, meta = nn.load_checkpoint(path)
        assert meta == {"kind": "test", "n": 3}
        assert list(loaded) == list(tensors)
        for k in tensors:
            np.testing.assert_array_equal(loaded[k], tensors[k])

    def test_rejects_non_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ValueError, match="not a checkpoint"):
            nn.load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "x.ckpt"
        nn.save_checkpoint(path, {"w": np.zeros(4)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            nn.load_checkpoint(path)

    def test_writes_are_byte_identical(self, tmp_path):
        tensors = {"w": np.arange(6.0).reshape(2, 3)}
        nn.save_checkpoint(tmp_path / "a.ckpt", tensors, meta={"x": 1})
        nn.save_checkpoint(tmp_path / "b.ckpt", tensors, meta={"x": 1})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
