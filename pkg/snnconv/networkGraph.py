# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

from dataclasses import dataclass, field

import numpy as np

from .layers import (Layer, Dense, Conv2d, MaxPool, PreNeuronMaxPool,
                     BatchNorm, ResidualAdd, Activation, channel_view)
from .errors import ShapeMismatchError, GraphError
from .constants import ACTIVATION_MODES


@dataclass
class ForwardResult:
    '''
    Outputs of an analog forward pass.

    `outputs[i]` is the output of layer i. For every activation slot k,
    `pre[k]` is its pre-activation z and `post[k]` its activation a,
    `slot_layers[k]` the layer index of the slot.
    '''
    inputs: np.ndarray
    outputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    slot_layers: list = field(default_factory=list)

    @property
    def output(self):
        return self.outputs[-1] if self.outputs else self.inputs


class NetworkGraph():

    def __init__(self, layers, input_shape, activation_mode='relu',
                 readout_scale=None, t0_estimate=None, norm_variant=None):
        '''
        Ordered layer graph shared by the analog (ReLU / clipped) and the
        spiking (IF) execution modes.

        Parameters:
        -----------
        layers: list of Layer
            Layers in forward order. `ResidualAdd.source` refers to the
            index of an earlier layer in this list.
        input_shape: tuple
            Per-sample input shape, (C, H, W) or (F,)
        activation_mode: str, default 'relu'
            One of 'relu', 'clip' or 'if', shared by every activation slot
        readout_scale: array-like, optional
            Factor mapping the network output back to the units of the
            original model after threshold absorption. Default 1.
        t0_estimate: float, optional
            Estimated arrival time of the first output spikes
        norm_variant: str, optional
            Label of the weight norm used for the reported error bound
        '''
        self.layers = list(layers)
        self.input_shape = tuple(int(n) for n in input_shape)
        self.activation_mode = activation_mode
        if readout_scale is None:
            readout_scale = [1.0]
        self.readout_scale = np.asarray(readout_scale, dtype=np.float64).reshape(-1)
        self.t0_estimate = None if t0_estimate is None else float(t0_estimate)
        self.norm_variant = norm_variant

        self.validate()

    def validate(self):
        '''Check mode, thresholds and residual references, then infer every layer shape'''
        if self.activation_mode not in ACTIVATION_MODES:
            raise GraphError(f'activation mode "{self.activation_mode}" not in {ACTIVATION_MODES}')

        for i, layer in enumerate(self.layers):
            if not isinstance(layer, Layer):
                raise GraphError(f'layer {i} is not a Layer instance: {layer!r}')
            if isinstance(layer, ResidualAdd) and not 0 <= layer.source < i:
                raise GraphError(f'layer {i}: residual source {layer.source} is not an earlier layer')
            if isinstance(layer, Activation) and self.activation_mode != 'relu' \
                    and layer.theta is None:
                raise GraphError(f'layer {i}: {self.activation_mode} mode requires a threshold')

        self.shapes = self.infer_shapes(self.input_shape)

    def infer_shapes(self, input_shape):
        '''Per-sample output shape of every layer; raises naming the failing layer'''
        shapes = []
        shape = tuple(input_shape)
        for i, layer in enumerate(self.layers):
            try:
                if isinstance(layer, ResidualAdd):
                    shape = layer.output_shape(shape, shapes[layer.source])
                else:
                    shape = layer.output_shape(shape)
            except ShapeMismatchError as err:
                raise ShapeMismatchError(str(err), layer_index=i) from None
            shapes.append(shape)
        return shapes

    @property
    def slots(self):
        '''Layer indices of the activation slots, in forward order'''
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Activation)]

    @property
    def output_shape(self):
        return self.shapes[-1] if self.shapes else self.input_shape

    def slot_channels(self, index):
        '''Channel (or feature) count of the activation slot at layer `index`'''
        return self.shapes[index][0]

    @property
    def thetas(self):
        return [self.layers[i].theta for i in self.slots]

    def set_thetas(self, thetas):
        for i, theta in zip(self.slots, thetas):
            self.layers[i].theta = None if theta is None else \
                np.asarray(theta, dtype=np.float64).reshape(-1)
        self.validate()

    def _check_batch(self, batch):
        batch = np.asarray(batch)
        if batch.ndim != len(self.input_shape) + 1:
            raise ShapeMismatchError(f'batch of shape {batch.shape} for input {self.input_shape}',
                                     layer_index=0)
        if tuple(batch.shape[1:]) != self.input_shape:
            # name the first layer that cannot take the batch
            self.infer_shapes(batch.shape[1:])
            raise ShapeMismatchError(f'batch of shape {batch.shape} for input {self.input_shape}',
                                     layer_index=0)
        return batch

    def forward_ann(self, batch, mode=None, hook=None):
        '''
        Analog forward pass with ReLU or clipped activations

        Parameters:
        -----------
        batch: ndarray (N, *input_shape)
        mode: str, optional
            'relu' or 'clip'. Defaults to the graph activation mode.
        hook: callable, optional
            Called as `hook(slot, index, z, a)` right after each activation
            slot is evaluated, before the next layer runs.

        Returns:
        --------
        ForwardResult
        '''
        mode = mode or self.activation_mode
        if mode not in ('relu', 'clip'):
            raise GraphError(f'analog forward needs mode relu or clip, got "{mode}"')
        x = self._check_batch(batch)

        result = ForwardResult(inputs=x)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Activation):
                z = x
                x = layer.forward(z, mode=mode)
                result.pre.append(z)
                result.post.append(x)
                result.slot_layers.append(i)
                if hook is not None:
                    hook(len(result.slot_layers) - 1, i, z, x)
            elif isinstance(layer, ResidualAdd):
                x = layer.forward(x, result.outputs[layer.source])
            else:
                x = layer.forward(x)
            result.outputs.append(x)

        return result

    def readout(self, output):
        '''Map a network output to the units of the original model'''
        return output * channel_view(self.readout_scale, np.ndim(output))

    def predict(self, batch, mode=None):
        return np.argmax(self.readout(self.forward_ann(batch, mode=mode).output), axis=1)

    def as_mode(self, mode):
        g = self.copy()
        g.activation_mode = mode
        g.validate()
        return g

    def copy(self):
        return NetworkGraph([layer.copy() for layer in self.layers], self.input_shape,
                            activation_mode=self.activation_mode,
                            readout_scale=self.readout_scale.copy(),
                            t0_estimate=self.t0_estimate,
                            norm_variant=self.norm_variant)

    def __eq__(self, other):
        if not isinstance(other, NetworkGraph):
            return False
        return (self.input_shape == other.input_shape
                and self.activation_mode == other.activation_mode
                and np.array_equal(self.readout_scale, other.readout_scale)
                and self.t0_estimate == other.t0_estimate
                and self.norm_variant == other.norm_variant
                and len(self.layers) == len(other.layers)
                and all(a == b for a, b in zip(self.layers, other.layers)))

    def __len__(self):
        return len(self.layers)

    def __repr__(self):
        lines = [f'NetworkGraph(input={self.input_shape}, mode={self.activation_mode})']
        for i, (layer, shape) in enumerate(zip(self.layers, self.shapes)):
            lines.append(f'  [{i}] {layer!r} -> {shape}')
        return '\n'.join(lines)


def forward_ann(graph, batch, mode=None, hook=None):
    return graph.forward_ann(batch, mode=mode, hook=hook)


def fold_batchnorm(graph):
    '''
    Fold every BatchNorm into the Dense/Conv2d layer right before it.
    The affine folding is done in float64 and stored back as float32.

    Returns:
    --------
    NetworkGraph
        New graph without BatchNorm layers; residual references are remapped
    '''
    layers, index_map = [], {}
    folded_sources = set()
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, BatchNorm):
            prev = graph.layers[i-1] if i > 0 else None
            if not isinstance(prev, (Dense, Conv2d)) or (i-1) in folded_sources:
                raise GraphError(f'layer {i}: BatchNorm must directly follow a Dense or Conv2d layer')
            scale, shift = layer.scale_shift()
            lin = layers[-1]
            w = lin.weight.astype(np.float64)
            w = w * scale.reshape((-1,) + (1,)*(w.ndim - 1))
            b = lin.bias.astype(np.float64)*scale + shift
            lin.weight = w.astype(np.float32)
            lin.bias = b.astype(np.float32)
            folded_sources.add(i-1)
            index_map[i] = len(layers) - 1
        else:
            index_map[i] = len(layers)
            layers.append(layer.copy())

    for new in layers:
        if isinstance(new, ResidualAdd):
            if new.source in folded_sources:
                raise GraphError(f'residual reads layer {new.source} before its BatchNorm is applied')
            new.source = index_map[new.source]

    return NetworkGraph(layers, graph.input_shape, activation_mode=graph.activation_mode,
                        readout_scale=graph.readout_scale.copy(),
                        t0_estimate=graph.t0_estimate, norm_variant=graph.norm_variant)


def rewrite_preneuron_maxpool(graph):
    '''
    Move max pooling in front of the activation slots.

    Every (Activation, MaxPool) pair becomes (PreNeuronMaxPool, Activation);
    for a monotone activation max(R(z)) == R(max(z)) on every window, so the
    analog outputs are unchanged. A MaxPool feeding an activation slot
    already acts on pre-activations and is relabelled; any other MaxPool
    would pool spikes and raises GraphError. No-op if the graph has no MaxPool.
    '''
    if graph.activation_mode != 'relu':
        raise GraphError(f'pre-neuron max pooling rewrite expects a relu graph, got "{graph.activation_mode}"')

    layers = [layer.copy() for layer in graph.layers]
    residual_sources = {l.source for l in layers if isinstance(l, ResidualAdd)}

    swapped = True
    while swapped:
        swapped = False
        for i in range(len(layers) - 1):
            if isinstance(layers[i], Activation) and type(layers[i+1]) is MaxPool:
                if i in residual_sources:
                    raise GraphError(f'layer {i}: residual reads the activation before its max pooling')
                pool = layers[i+1]
                layers[i], layers[i+1] = PreNeuronMaxPool(pool.kernel, pool.stride), layers[i]
                swapped = True

    for i in reversed(range(len(layers))):
        layer = layers[i]
        if type(layer) is MaxPool:
            # pooling the input current of a slot is already pre-neuron
            if i + 1 < len(layers) and isinstance(layers[i+1], (Activation, PreNeuronMaxPool)):
                layers[i] = PreNeuronMaxPool(layer.kernel, layer.stride)
            else:
                raise GraphError(f'layer {i}: max pooling must sit right after or right before '
                                 f'an activation slot')

    return NetworkGraph(layers, graph.input_shape, activation_mode=graph.activation_mode,
                        readout_scale=graph.readout_scale.copy(),
                        t0_estimate=graph.t0_estimate, norm_variant=graph.norm_variant)
