import sys

import numpy as np
import pytest

sys.path.append('../snnconv')

from snnconv.layers import (Dense, Conv2d, MaxPool, AvgPool, BatchNorm, ResidualAdd,
                            Flatten, Activation)
from snnconv.networkGraph import NetworkGraph, fold_batchnorm, rewrite_preneuron_maxpool
from snnconv.thresholdBalancer import BalanceConfig, clipify, balance
from snnconv.modelIO import DatasetBatch


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2./fan_in)


def make_mlp(seed=0, sizes=(16, 32, 32, 10)):
    '''ReLU MLP, Dense -> Activation blocks and a Dense readout'''
    rng = np.random.default_rng(seed)
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(_he(rng, (n_out, n_in), n_in), 0.1*rng.standard_normal(n_out)))
        if k < len(sizes) - 2:
            layers.append(Activation())
    return NetworkGraph(layers, (sizes[0],))


def _bn(rng, c):
    return BatchNorm(gamma=1 + 0.1*rng.standard_normal(c), beta=0.1*rng.standard_normal(c),
                     mean=0.1*rng.standard_normal(c), var=1 + 0.1*rng.random(c))


def make_convnet(seed=0, channels=8):
    '''
    conv-BN-act-maxpool, conv-BN-act, conv-BN-residual-act, avgpool-flatten-dense
    on (3, 8, 8) inputs
    '''
    rng = np.random.default_rng(seed)
    c = channels

    def conv(c_in):
        return Conv2d(_he(rng, (c, c_in, 3, 3), 9*c_in), 0.05*rng.standard_normal(c), padding=1)

    layers = [
        conv(3), _bn(rng, c), Activation(), MaxPool(2),          # 0..3  -> (c, 4, 4)
        conv(c), _bn(rng, c), Activation(),                       # 4..6
        conv(c), _bn(rng, c), ResidualAdd(source=6), Activation(),  # 7..10
        AvgPool(2), Flatten(),                                    # 11, 12 -> 4c
        Dense(_he(rng, (10, 4*c), 4*c), 0.05*rng.standard_normal(10)),
    ]
    return NetworkGraph(layers, (3, 8, 8))


def make_data(graph, n, seed=0, keep=0.5):
    '''
    Uniform inputs labelled by the network itself; only the `keep` fraction
    with the widest top-1 margin is returned.
    '''
    rng = np.random.default_rng(seed)
    x = rng.random((int(n/keep),) + graph.input_shape).astype(np.float32)
    out = graph.forward_ann(x, mode='relu').output
    top = np.sort(out, axis=1)
    margin = (top[:, -1] - top[:, -2]) / (np.abs(top[:, -1]) + 1e-12)
    idx = np.sort(np.argsort(-margin)[:n])
    return x[idx], np.argmax(out[idx], axis=1)


def batches(x, labels=None, batch_size=50):
    return [DatasetBatch(data=x[i:i + batch_size],
                         labels=None if labels is None else labels[i:i + batch_size],
                         indices=np.arange(i, min(i + batch_size, len(x))))
            for i in range(0, len(x), batch_size)]


def prepare(graph, x, granularity='layer', iterations=300, seed=0):
    '''fold, rewrite, clipify and balance on the calibration inputs'''
    g = rewrite_preneuron_maxpool(fold_batchnorm(graph))
    g = clipify(g, granularity=granularity)
    cfg = BalanceConfig(iterations=iterations, seed=seed, granularity=granularity)
    g, _ = balance(g, batches(x, batch_size=32), config=cfg)
    return g


@pytest.fixture(scope='session')
def mlp():
    return make_mlp(seed=1)


@pytest.fixture(scope='session')
def mlp_data(mlp):
    return make_data(mlp, 200, seed=2)


@pytest.fixture(scope='session')
def mlp_balanced(mlp, mlp_data):
    return prepare(mlp, mlp_data[0])


@pytest.fixture(scope='session')
def convnet():
    return make_convnet(seed=3)


@pytest.fixture(scope='session')
def conv_data(convnet):
    return make_data(convnet, 300, seed=4)


@pytest.fixture(scope='session')
def conv_balanced(convnet, conv_data):
    return prepare(convnet, conv_data[0])
