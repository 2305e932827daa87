# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from .layers import (Dense, Conv2d, MaxPool, AvgPool, BatchNorm, ResidualAdd,
                     Flatten, Activation)
from .modelIO import as_array
from .logger import LogMixin
from .errors import (ConfigError, GraphError, EmptyDataError, ThresholdError,
                     ShapeMismatchError)
from .constants import (ETA, ITERATIONS, THETA_FLOOR, ROBUST_PERCENTILE,
                        GRANULARITIES)


@dataclass
class BalanceConfig:
    '''
    Settings of a threshold balancing run

    eta: learning rate of the local update
    iterations: number K of sampled batches
    granularity: 'layer' (one threshold per slot) or 'channel'
        (one per conv channel, one per feature for dense layers)
    batch_size: samples per calibration batch when reading a dataset
    seed: seeds the batch sampling
    normalize_by_count: divide each update by the number of summed elements
    theta_floor: lower bound applied to every threshold when finalizing
    '''
    eta: float = ETA
    iterations: int = ITERATIONS
    granularity: str = 'layer'
    batch_size: int = 64
    seed: int = 0
    normalize_by_count: bool = True
    theta_floor: float = THETA_FLOOR

    def validate(self):
        if not self.eta > 0:
            raise ConfigError(f'eta must be > 0, got {self.eta}')
        if int(self.iterations) < 1:
            raise ConfigError(f'iterations must be >= 1, got {self.iterations}')
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f'granularity must be one of {GRANULARITIES}, got "{self.granularity}"')
        if int(self.batch_size) < 1:
            raise ConfigError(f'batch_size must be >= 1, got {self.batch_size}')
        if not self.theta_floor > 0:
            raise ConfigError(f'theta_floor must be > 0, got {self.theta_floor}')
        return self


@dataclass
class ThresholdState:
    '''Thresholds per activation slot with the bookkeeping of the balancing run'''
    thetas: list
    last_delta: list = None
    iteration: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.last_delta is None:
            self.last_delta = [0.] * len(self.thetas)

    def to_csv(self, filename='convergence.csv'):
        '''Convergence report: iteration, slot, theta (mean over channels), max |dtheta|'''
        rows = np.array(self.history, dtype=object).reshape(-1, 4)
        np.savetxt(filename, rows, fmt=['%d', '%d', '%.10g', '%.10g'], delimiter=',',
                   header='iteration,slot,theta_mean,max_abs_delta', comments='')


def _channels_first(zhat):
    z = np.asarray(zhat, dtype=np.float64)
    if z.ndim == 1:
        return z.reshape(-1, 1)
    return np.moveaxis(z, 1, 0).reshape(z.shape[1], -1)


def delta_theta(zhat, theta, normalize=False):
    '''
    Layer-wise threshold update  -sum_i 2 (z_i - theta) H(z_i - theta),  H(0) = 0

    With `normalize` the sum is divided by the number of elements.
    '''
    z = np.asarray(zhat, dtype=np.float64).reshape(-1)
    d = z - float(np.asarray(theta).reshape(-1)[0])
    delta = -2.*np.sum(d[d > 0])
    if normalize and z.size:
        delta /= z.size
    return float(delta)


def delta_theta_channelwise(zhat, theta, normalize=False):
    '''
    Per-channel threshold update over all batch and spatial positions.
    Channels sit on axis 1 of `zhat` (axis 0 for a 1-D vector).
    '''
    z = _channels_first(zhat)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size != z.shape[0]:
        raise ShapeMismatchError(f'{theta.size} thresholds for {z.shape[0]} channels')
    d = z - theta[:, None]
    delta = -2.*np.where(d > 0, d, 0.).sum(axis=1)
    if normalize and z.shape[1]:
        delta /= z.shape[1]
    return delta


def _check_prepared(graph):
    if any(type(layer) is MaxPool for layer in graph.layers):
        raise GraphError('max pooling must be rewritten pre-neuron before calibration')


def clipify(graph, granularity='layer'):
    '''
    Switch a ReLU graph to clipped activations with every threshold at 0

    Parameters:
    -----------
    graph: NetworkGraph
        ReLU graph with max pooling already rewritten pre-neuron
    granularity: str, default 'layer'
        'layer' gives one threshold per slot, 'channel' one per channel
        (one per feature after a dense layer)
    '''
    if graph.activation_mode != 'relu':
        raise GraphError(f'clipify expects a relu graph, got "{graph.activation_mode}"')
    if granularity not in GRANULARITIES:
        raise ConfigError(f'granularity must be one of {GRANULARITIES}, got "{granularity}"')
    _check_prepared(graph)

    g = graph.copy()
    for i in g.slots:
        n = 1 if granularity == 'layer' else g.slot_channels(i)
        g.layers[i].theta = np.zeros(n, dtype=np.float64)
    g.activation_mode = 'clip'
    g.validate()
    return g


def _materialize(data):
    batches = [np.asarray(as_array(b)) for b in data]
    batches = [b for b in batches if b.shape[0] > 0]
    if not batches:
        raise EmptyDataError('calibration data is empty')
    return batches


class ThresholdBalancer(LogMixin):

    def __init__(self, graph, config=None, verbose=0):
        '''
        Local threshold balancing of a clipped network.

        Every iteration draws one calibration batch, runs the clipped
        forward pass and, slot after slot, updates the threshold from the
        pre-activations right after the slot output is computed with the
        current threshold. Thresholds never decrease.

        Parameters:
        -----------
        graph: NetworkGraph
            Graph in clip mode, e.g. from `clipify`
        config: BalanceConfig, optional
        verbose: int or bool, default 0
            Progress bar and log messages on the terminal

        Attributes
        ----------
        state: ThresholdState
            Thresholds and convergence history after `balance`
        '''
        if graph.activation_mode != 'clip':
            raise GraphError(f'balancing expects a clip graph, got "{graph.activation_mode}"')
        self.config = (config or BalanceConfig()).validate()
        self.verbose = verbose
        self.graph = graph.copy()
        self._init_thetas()
        self.state = ThresholdState(thetas=self.graph.thetas)

    def _init_thetas(self):
        g, cfg = self.graph, self.config
        for i in g.slots:
            layer, n = g.layers[i], g.slot_channels(i)
            theta = np.maximum(layer.theta, 0.)
            if cfg.granularity == 'channel' and theta.size == 1 and n > 1:
                theta = np.full(n, theta[0])
            elif cfg.granularity == 'layer' and theta.size > 1:
                raise ConfigError(f'layer {i} holds {theta.size} thresholds but granularity is "layer"')
            layer.theta = theta

    def update(self, slot, index, z, a):
        '''Forward hook: apply the local update to the slot just evaluated'''
        layer = self.graph.layers[index]
        cfg = self.config
        if layer.theta.size == 1:
            delta = np.array([delta_theta(z, layer.theta, normalize=cfg.normalize_by_count)])
        else:
            delta = delta_theta_channelwise(z, layer.theta, normalize=cfg.normalize_by_count)
        layer.theta = np.maximum(layer.theta - cfg.eta*delta, 0.)

        max_delta = float(np.max(np.abs(delta)))
        self.state.last_delta[slot] = max_delta
        self.state.history.append((self.state.iteration, slot, float(layer.theta.mean()), max_delta))

    def balance(self, data):
        '''
        Run the K balancing iterations and finalize the thresholds

        Parameters:
        -----------
        data: iterable
            Calibration batches (DatasetBatch or arrays). Consumed once.

        Returns:
        --------
        (NetworkGraph, ThresholdState)
        '''
        batches = _materialize(data)
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.log(f'Balancing {len(self.graph.slots)} activation slots, K={cfg.iterations}, '
                 f'eta={cfg.eta}, granularity={cfg.granularity}')

        for k in tqdm(range(int(cfg.iterations)), disable=not self.verbose):
            self.state.iteration = k + 1
            batch = batches[int(rng.integers(len(batches)))]
            self.graph.forward_ann(batch, mode='clip', hook=self.update)

        self.finalize()
        return self.graph, self.state

    def finalize(self):
        '''Raise every threshold below the floor to the floor'''
        floor = self.config.theta_floor
        for i in self.graph.slots:
            layer = self.graph.layers[i]
            low = layer.theta < floor
            if np.any(low):
                self.log(f'layer {i}: {int(low.sum())} threshold(s) raised to the floor {floor:g}')
            layer.theta = np.maximum(layer.theta, floor)
        self.state.thetas = self.graph.thetas
        for i, theta in zip(self.graph.slots, self.state.thetas):
            self.log(f'layer {i}: theta mean {theta.mean():.6g}, max {theta.max():.6g}')


def balance(graph, data, config=None, verbose=0):
    '''Threshold balancing of a clipped graph, see `ThresholdBalancer`'''
    return ThresholdBalancer(graph, config=config, verbose=verbose).balance(data)


def robust_norm(graph, data, percentile=ROBUST_PERCENTILE, granularity='layer',
                theta_floor=THETA_FLOOR):
    '''
    Percentile calibration baseline

    Slot by slot, the threshold is the given percentile of the ReLU
    activations over the calibration data, with all earlier slots already
    clipped at their calibrated thresholds.

    Parameters:
    -----------
    graph: NetworkGraph
        ReLU graph with max pooling rewritten pre-neuron
    data: iterable of batches
    percentile: float, default 99
    granularity: str, default 'layer'

    Returns:
    --------
    NetworkGraph in clip mode
    '''
    if not 0 < percentile <= 100:
        raise ConfigError(f'percentile must be in (0, 100], got {percentile}')
    batches = _materialize(data)
    g = clipify(graph, granularity=granularity)
    for i in g.slots:
        g.layers[i].theta = np.full_like(g.layers[i].theta, np.inf)

    for k, i in enumerate(g.slots):
        collected = []

        def grab(slot, index, z, a):
            if slot == k:
                collected.append(_channels_first(np.maximum(z, 0)))

        for batch in batches:
            g.forward_ann(batch, mode='clip', hook=grab)
        acts = np.concatenate(collected, axis=1)
        if g.layers[i].theta.size == 1:
            theta = np.percentile(acts, percentile, keepdims=False).reshape(1)
        else:
            theta = np.percentile(acts, percentile, axis=1)
        g.layers[i].theta = np.maximum(theta.astype(np.float64), theta_floor)

    return g


def _next_target(layers, i, n_out):
    '''Threshold of the slot fed by linear layer i, looking through pools and residual joins'''
    for layer in layers[i+1:]:
        if isinstance(layer, Activation):
            return np.broadcast_to(layer.theta, (n_out,)).astype(np.float64)
        if not isinstance(layer, (MaxPool, AvgPool, ResidualAdd)):
            break
    return np.ones(n_out)


def _compact(vec):
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    return vec[:1].copy() if np.all(vec == vec[0]) else vec


def absorb_thresholds(graph, theta_floor=THETA_FLOOR):
    '''
    Rescale weights so every threshold becomes 1.

    The rows of the linear layer feeding a slot are divided by the slot
    thresholds, and the columns of the next linear layer multiplied back.
    Residual skips get a per-channel scale; whatever scale remains at the
    network output is folded into `readout_scale`.

    Returns:
    --------
    NetworkGraph
        Function-preserving graph with unit thresholds
    '''
    if graph.activation_mode not in ('clip', 'if'):
        raise GraphError(f'absorption needs finalized thresholds, graph is in "{graph.activation_mode}" mode')
    for i in graph.slots:
        theta = graph.layers[i].theta
        if np.any(theta < theta_floor):
            raise ThresholdError(f'layer {i}: threshold {theta.min():g} below the floor {theta_floor:g}')

    g = graph.copy()
    s = np.ones(1)
    scales = []
    for i, layer in enumerate(g.layers):
        in_shape = g.shapes[i-1] if i else g.input_shape

        if isinstance(layer, (Dense, Conv2d)):
            n_out = layer.weight.shape[0]
            t = _next_target(g.layers, i, n_out)
            w = layer.weight.astype(np.float64)
            if s.size not in (1, layer.weight.shape[1]):
                raise ShapeMismatchError(f'{s.size} input scales for {layer.weight.shape[1]} inputs',
                                         layer_index=i)
            s_in = s.reshape((1, -1) + (1,)*(w.ndim - 2))
            w = w * s_in / t.reshape((-1,) + (1,)*(w.ndim - 1))
            layer.weight = w.astype(np.float32)
            layer.bias = (layer.bias.astype(np.float64) / t).astype(np.float32)
            s = _compact(t)

        elif isinstance(layer, Activation):
            theta = layer.theta / s
            layer.theta = _compact(theta) if layer.theta.size == 1 else theta

        elif isinstance(layer, ResidualAdd):
            k0 = np.ones(1) if layer.scale is None else layer.scale.astype(np.float64)
            k = _compact(k0 * scales[layer.source] / s)
            if not (layer.scale is None and np.all(k == 1.)):
                layer.scale = k.astype(np.float32)

        elif isinstance(layer, Flatten):
            if s.size > 1:
                s = np.repeat(s, int(np.prod(in_shape[1:])))

        elif isinstance(layer, BatchNorm):
            raise GraphError(f'layer {i}: fold BatchNorm before absorbing thresholds')

        scales.append(s)

    readout = g.readout_scale * s
    g.readout_scale = _compact(readout) if g.readout_scale.size == 1 else readout
    g.validate()
    return g
