import sys
import numpy as np
import pytest

sys.path.append('../snnconv')

from snnconv.layers import (Dense, Conv2d, MaxPool, PreNeuronMaxPool, AvgPool, BatchNorm,
                            ResidualAdd, Flatten, Activation, conv2d, conv2d_transpose)
from snnconv.networkGraph import NetworkGraph, fold_batchnorm, rewrite_preneuron_maxpool
from snnconv.errors import GraphError, ShapeMismatchError

from conftest import make_convnet, make_mlp


def conv_oracle(x, w, b, stride, pad):
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2*pad - kh)//stride + 1, (W + 2*pad - kw)//stride + 1
    y = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i*stride:i*stride + kh, j*stride:j*stride + kw]
                    y[n, o, i, j] = np.sum(patch*w[o]) + b[o]
    return y


class TestLayers:

    @pytest.mark.parametrize('stride, pad', [(1, 0), (1, 1), (2, 1)])
    def test_conv2d_matches_loops(self, stride, pad):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 6, 5))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        y = conv2d(x, w, b, stride=stride, padding=pad)
        assert np.allclose(y, conv_oracle(x, w, b, stride, pad))

    def test_conv2d_transpose_is_adjoint(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 3, 7, 7))
        w = rng.standard_normal((5, 3, 3, 3))
        y = conv2d(x, w, stride=2, padding=1)
        g = rng.standard_normal(y.shape)
        lhs = np.sum(y*g)
        rhs = np.sum(x*conv2d_transpose(g, w, (7, 7), stride=2, padding=1))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_avgpool_adjoint(self):
        rng = np.random.default_rng(2)
        pool = AvgPool(2)
        x = rng.standard_normal((1, 2, 4, 4))
        g = rng.standard_normal((1, 2, 2, 2))
        assert np.sum(pool.forward(x)*g) == pytest.approx(np.sum(x*pool.adjoint(g, (4, 4))))

    def test_dense_and_flatten(self):
        d = Dense([[1., 2.], [0., -1.], [3., 0.]], [0.5, 0., -1.])
        out = d.forward(np.array([[1., 1.]]))
        assert np.allclose(out, [[3.5, -1., 2.]])
        assert d.output_shape((2,)) == (3,)
        assert Flatten().output_shape((2, 3, 4)) == (24,)

    def test_clip_properties(self):
        rng = np.random.default_rng(3)
        act = Activation(theta=[0.7])
        z = rng.uniform(-2, 2, size=1000)
        c = act.forward(z, mode='clip')
        assert np.all(c >= 0) and np.all(c <= 0.7)
        inside = (z >= 0) & (z <= 0.7)
        assert np.array_equal(c[inside], z[inside])

    def test_channel_clip(self):
        act = Activation(theta=[1., 2.])
        z = np.full((1, 2, 2, 2), 1.5)
        c = act.forward(z, mode='clip')
        assert np.all(c[:, 0] == 1.) and np.all(c[:, 1] == 1.5)

    def test_clip_without_threshold(self):
        with pytest.raises(GraphError):
            Activation().forward(np.ones(3), mode='clip')

    def test_relu_is_one_lipschitz(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((2, 500, 20))
        lhs = np.linalg.norm(np.maximum(a, 0) - np.maximum(b, 0), axis=1)
        rhs = np.linalg.norm(a - b, axis=1)
        assert np.all(lhs <= rhs + 1e-12)

    def test_batchnorm_scale_shift(self):
        bn = BatchNorm(gamma=[2.], beta=[1.], mean=[0.5], var=[4.], eps=0.)
        scale, shift = bn.scale_shift()
        assert scale[0] == pytest.approx(1.)
        assert shift[0] == pytest.approx(0.5)


class TestNetworkGraph:

    def test_shapes(self, convnet):
        assert convnet.shapes[3] == (8, 4, 4)
        assert convnet.shapes[12] == (32,)
        assert convnet.output_shape == (10,)
        assert convnet.slots == [2, 6, 10]

    def test_shape_mismatch_names_layer(self):
        layers = [Dense(np.ones((4, 6))), Activation(), Dense(np.ones((3, 5)))]
        with pytest.raises(ShapeMismatchError) as err:
            NetworkGraph(layers, (6,))
        assert err.value.layer_index == 2

    def test_batch_shape_mismatch(self, mlp):
        with pytest.raises(ShapeMismatchError):
            mlp.forward_ann(np.zeros((2, 15)))

    def test_residual_must_look_back(self):
        layers = [Dense(np.eye(3)), ResidualAdd(source=1), Activation()]
        with pytest.raises(GraphError):
            NetworkGraph(layers, (3,))

    def test_clip_mode_needs_thresholds(self, mlp):
        with pytest.raises(GraphError):
            mlp.as_mode('clip')

    def test_hook_order(self, mlp):
        seen = []
        mlp.forward_ann(np.zeros((1, 16)), hook=lambda k, i, z, a: seen.append((k, i)))
        assert seen == [(0, 1), (1, 3)]

    def test_fold_batchnorm(self, convnet):
        x = np.random.default_rng(5).random((20, 3, 8, 8))
        folded = fold_batchnorm(convnet)
        assert not any(isinstance(l, BatchNorm) for l in folded.layers)
        assert len(folded) == len(convnet) - 3
        res = [l for l in folded.layers if isinstance(l, ResidualAdd)][0]
        assert isinstance(folded.layers[res.source], Activation)
        np.testing.assert_allclose(folded.forward_ann(x).output, convnet.forward_ann(x).output,
                                   rtol=1e-4, atol=1e-5)

    def test_fold_batchnorm_placement(self):
        layers = [Dense(np.eye(2)), Activation(), BatchNorm([1, 1], [0, 0], [0, 0], [1, 1])]
        with pytest.raises(GraphError):
            fold_batchnorm(NetworkGraph(layers, (2,)))

    def test_preneuron_maxpool_is_exact(self, convnet):
        g = fold_batchnorm(convnet)
        rewritten = rewrite_preneuron_maxpool(g)
        assert isinstance(rewritten.layers[2], PreNeuronMaxPool)
        assert isinstance(rewritten.layers[3], Activation)
        assert not any(type(l) is MaxPool for l in rewritten.layers)
        x = np.random.default_rng(6).standard_normal((1000, 3, 8, 8))
        assert np.array_equal(rewritten.forward_ann(x).output, g.forward_ann(x).output)

    def test_rewrite_without_maxpool_is_noop(self, mlp):
        assert rewrite_preneuron_maxpool(mlp) == mlp

    def test_maxpool_on_spikes_is_rejected(self):
        layers = [Conv2d(np.ones((1, 1, 1, 1))), Activation(), AvgPool(2), MaxPool(2), Flatten()]
        with pytest.raises(GraphError, match='layer 3'):
            rewrite_preneuron_maxpool(NetworkGraph(layers, (1, 8, 8)))

    def test_maxpool_feeding_a_slot_is_relabelled(self):
        rng = np.random.default_rng(8)
        layers = [Conv2d(rng.standard_normal((2, 1, 3, 3)), padding=1), MaxPool(2), MaxPool(2),
                  Activation()]
        g = NetworkGraph(layers, (1, 8, 8))
        rewritten = rewrite_preneuron_maxpool(g)
        assert [type(l) for l in rewritten.layers[1:3]] == [PreNeuronMaxPool]*2
        x = rng.standard_normal((50, 1, 8, 8))
        assert np.array_equal(rewritten.forward_ann(x).output, g.forward_ann(x).output)

    def test_copy_and_eq(self, convnet):
        g = convnet.copy()
        assert g == convnet
        g.layers[0].weight[0, 0, 0, 0] += 1
        assert g != convnet

    def test_readout_scale(self):
        g = make_mlp(seed=0, sizes=(4, 3))
        g.readout_scale = np.array([2.])
        x = np.ones((1, 4))
        assert np.allclose(g.readout(g.forward_ann(x).output), 2*g.forward_ann(x).output)


def test_convnet_builder_is_deterministic():
    assert make_convnet(seed=3) == make_convnet(seed=3)
