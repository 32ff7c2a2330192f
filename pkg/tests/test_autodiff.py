import numpy as np
import pytest

from sekit import autodiff as ad


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


class TestPrimitiveGradients:
    CASES = {
        "add": lambda x: ad.sum(ad.add(x, ad.Tensor(rand(x.shape, 9)))),
        "add_broadcast": lambda x: ad.sum(ad.add(x, ad.Tensor(rand((x.shape[0], 1), 9)))),
        "sub": lambda x: ad.sum(ad.sub(ad.Tensor(rand(x.shape, 9)), x)),
        "mul": lambda x: ad.sum(ad.mul(x, ad.Tensor(rand(x.shape, 9)))),
        "div": lambda x: ad.sum(ad.div(x, ad.Tensor(rand(x.shape, 9, lo=1.0, hi=2.0)))),
        "div_denominator": lambda x: ad.sum(ad.div(ad.Tensor(rand(x.shape, 9)),
                                                   ad.add(x, 3.0))),
        "matmul": lambda x: ad.sum(ad.matmul(x, ad.Tensor(rand((x.shape[1], 4), 9)))),
        "sigmoid": lambda x: ad.sum(ad.sigmoid(x)),
        "tanh": lambda x: ad.sum(ad.tanh(x)),
        "sqrt": lambda x: ad.sum(ad.sqrt(ad.add(ad.mul(x, x), 0.5))),
        "log10_eps": lambda x: ad.sum(ad.log10_eps(ad.add(ad.mul(x, x), 0.1))),
        "mean": lambda x: ad.mean(ad.mul(x, x)),
        "pad": lambda x: ad.sum(ad.mul(p := ad.pad1d(x, 2, 3), p)),
        "narrow": lambda x: ad.sum(ad.mul(n := ad.narrow(x, 1, 1, 3), n)),
        "reshape": lambda x: ad.sum(ad.mul(r := ad.reshape(x, (-1,)), r)),
        "concat": lambda x: ad.sum(ad.mul(c := ad.concat([x, x], axis=0), c)),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_elementwise_and_structural(self, name):
        x = ad.Tensor(rand((3, 6), seed=1))
        assert ad.grad_check(self.CASES[name], x, n_coords=18) < 1e-6

    def test_relu_away_from_kink(self):
        data = rand((4, 5), seed=2)
        data[np.abs(data) < 1e-3] = 0.5
        assert ad.grad_check(lambda x: ad.sum(ad.relu(x)), ad.Tensor(data), n_coords=20) < 1e-6

    def test_prelu(self):
        data = rand((4, 6), seed=3)
        data[np.abs(data) < 1e-3] = -0.5
        slope = ad.Tensor(np.full((4, 1), 0.25))
        assert ad.grad_check(lambda x: ad.sum(ad.prelu(x, slope)), ad.Tensor(data), n_coords=20) < 1e-6
        x = ad.Tensor(data)
        assert ad.grad_check(lambda s: ad.sum(ad.prelu(x, s)), slope, n_coords=4) < 1e-6

    def test_global_layer_norm(self):
        x = ad.Tensor(rand((5, 7), seed=4))
        gain = ad.Tensor(rand((5, 1), seed=5, lo=0.5, hi=1.5))
        bias = ad.Tensor(rand((5, 1), seed=6))
        assert ad.grad_check(lambda t: ad.sum(ad.mul(g := ad.global_layer_norm(t, gain, bias), g)),
                             x, n_coords=25) < 1e-6
        assert ad.grad_check(lambda t: ad.sum(ad.global_layer_norm(x, t, bias)), gain, n_coords=5) < 1e-6
        assert ad.grad_check(lambda t: ad.sum(ad.global_layer_norm(x, gain, t)), bias, n_coords=5) < 1e-6

    @pytest.mark.parametrize("stride,dilation,groups,c_in,c_out", [
        (1, 1, 1, 3, 5),
        (2, 1, 1, 3, 5),
        (1, 2, 1, 3, 5),
        (2, 3, 1, 4, 2),
        (1, 2, 4, 4, 4),   # depthwise
        (1, 1, 2, 4, 6),   # generic grouping
    ])
    def test_conv1d(self, stride, dilation, groups, c_in, c_out):
        x = ad.Tensor(rand((c_in, 21), seed=7))
        w = ad.Tensor(rand((c_out, c_in // groups, 3), seed=8))
        kwargs = dict(stride=stride, dilation=dilation, groups=groups)
        loss_x = lambda t: ad.sum(ad.mul(c := ad.conv1d(t, w, **kwargs), c))
        loss_w = lambda t: ad.sum(ad.mul(c := ad.conv1d(x, t, **kwargs), c))
        assert ad.grad_check(loss_x, x, n_coords=25) < 1e-6
        assert ad.grad_check(loss_w, w, n_coords=25) < 1e-6

    @pytest.mark.parametrize("stride", [1, 2, 4])
    def test_conv1d_transpose(self, stride):
        x = ad.Tensor(rand((3, 11), seed=9))
        w = ad.Tensor(rand((3, 2, 6), seed=10))
        loss_x = lambda t: ad.sum(ad.mul(c := ad.conv1d_transpose(t, w, stride=stride), c))
        loss_w = lambda t: ad.sum(ad.mul(c := ad.conv1d_transpose(x, t, stride=stride), c))
        assert ad.grad_check(loss_x, x, n_coords=25) < 1e-6
        assert ad.grad_check(loss_w, w, n_coords=25) < 1e-6


class TestConvTranspose:
    def test_adjoint_identity(self):
        # <conv(x, w), y> == <x, conv_transpose(y, w)> for matching layouts.
        rng = np.random.default_rng(11)
        stride, K = 3, 6
        x = rng.standard_normal((4, 33))
        w = rng.standard_normal((5, 4, K))
        with ad.no_grad():
            cx = ad.conv1d(ad.Tensor(x), ad.Tensor(w), stride=stride).data
            y = rng.standard_normal(cx.shape)
            xt = ad.conv1d_transpose(ad.Tensor(y), ad.Tensor(w), stride=stride).data
        lhs = np.sum(cx * y)
        rhs = np.sum(x[:, : xt.shape[1]] * xt)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_identity_kernel_conv(self):
        x = ad.Tensor(rand((3, 9), seed=12))
        out = ad.conv1d(x, ad.Tensor(np.eye(3)[:, :, None]))
        assert np.allclose(out.data, x.data, atol=1e-15)


class TestGlobalLayerNorm:
    def test_normalizes_before_affine(self):
        rng = np.random.default_rng(13)
        x = ad.Tensor(10.0 * rng.standard_normal((6, 50)))
        ones = ad.Tensor(np.ones((6, 1)))
        zeros = ad.Tensor(np.zeros((6, 1)))
        out = ad.global_layer_norm(x, ones, zeros).data
        assert abs(out.mean()) < 1e-9
        assert abs(out.var() - 1.0) < 1e-9


class TestBackward:
    def test_sum_gives_ones(self):
        x = ad.Tensor(rand((4, 3)), requires_grad=True)
        grads = ad.backward(ad.sum(x))
        assert np.array_equal(grads[x], np.ones((4, 3)))

    def test_sum_of_squares_gives_two_x(self):
        x = ad.Tensor(rand((5,), seed=14), requires_grad=True)
        grads = ad.backward(ad.sum(ad.mul(x, x)))
        assert np.max(np.abs(grads[x] - 2 * x.data)) < 1e-12

    def test_non_scalar_loss_rejected(self):
        x = ad.Tensor(rand((3,)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(ad.mul(x, 2.0))

    def test_second_backward_rejected(self):
        x = ad.Tensor(rand((3,)), requires_grad=True)
        loss = ad.sum(x)
        ad.backward(loss)
        with pytest.raises(RuntimeError, match="consumed"):
            ad.backward(loss)

    def test_unused_leaf_gets_zero_gradient(self):
        x = ad.Tensor(rand((3,)), requires_grad=True)
        w = ad.Tensor(rand((3,), seed=15), requires_grad=True)
        _unused = ad.mul(x, w)
        grads = ad.backward(ad.sum(x))
        assert np.array_equal(grads[w], np.zeros(3))

    def test_accumulation_matches_across_association_orders(self):
        data = rand((6,), seed=16)

        def run(assoc_left):
            x = ad.Tensor(data.copy(), requires_grad=True)
            a, b, c = ad.mul(x, x), ad.mul(x, 2.0), ad.sigmoid(x)
            if assoc_left:
                total = ad.add(ad.add(a, b), c)
            else:
                total = ad.add(a, ad.add(b, c))
            return ad.backward(ad.sum(total))[x]

        assert np.max(np.abs(run(True) - run(False))) < 1e-12

    def test_bias_broadcast_gradient_shape(self):
        x = ad.Tensor(rand((3, 5)), requires_grad=True)
        b = ad.Tensor(rand((3, 1), seed=17), requires_grad=True)
        grads = ad.backward(ad.sum(ad.mul(ad.add(x, b), ad.add(x, b))))
        assert grads[b].shape == (3, 1)
        expected = (2 * (x.data + b.data)).sum(axis=1, keepdims=True)
        assert np.max(np.abs(grads[b] - expected)) < 1e-12

    def test_shape_mismatch_names_op(self):
        with pytest.raises(ValueError, match="add"):
            ad.add(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 5))))

    def test_no_grad_suppresses_recording(self):
        x = ad.Tensor(rand((3,)), requires_grad=True)
        with ad.no_grad():
            y = ad.mul(x, x)
        assert not y.requires_grad and y.tape is None


class TestGradCheckUtility:
    def test_sum_of_squares(self):
        x = ad.Tensor(rand((10,), seed=18))
        assert ad.grad_check(lambda t: ad.sum(ad.mul(t, t)), x) < 1e-9

    def test_sigmoid_sum(self):
        x = ad.Tensor(rand((10,), seed=19))
        assert ad.grad_check(lambda t: ad.sum(ad.sigmoid(t)), x) < 1e-7

    def test_relu_sum_away_from_kink(self):
        data = rand((10,), seed=20)
        data[np.abs(data) < 1e-3] = 0.3
        assert ad.grad_check(lambda t: ad.sum(ad.relu(t)), ad.Tensor(data), step=1e-5) < 1e-6

    def test_params_variant_matches(self):
        params = {
            "a": ad.Tensor(rand((4, 4), seed=21), requires_grad=True),
            "b": ad.Tensor(rand((4, 1), seed=22), requires_grad=True),
        }

        def loss():
            h = ad.add(ad.matmul(params["a"], ad.Tensor(np.ones((4, 2)))), params["b"])
            return ad.sum(ad.mul(ad.tanh(h), ad.tanh(h)))

        assert ad.grad_check_params(loss, params, n_coords=20) < 1e-6
