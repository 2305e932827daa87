# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

'''
Layer kinds of the forward-only network engine.

Tensors are numpy arrays with the batch on axis 0 and channels (or dense
features) on axis 1: (N, C, H, W) for feature maps, (N, F) for vectors.
Parameters are stored as float32, thresholds as float64.
'''

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError, GraphError


def channel_view(vec, ndim):
    '''Reshape a per-channel vector so it broadcasts on axis 1 of an `ndim` tensor'''
    vec = np.asarray(vec)
    if vec.size == 1:
        return vec.reshape(())
    return vec.reshape((1, -1) + (1,) * (ndim - 2))


def _windows(x, kh, kw, stride, padding=0):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, weight, bias=None, stride=1, padding=0):
    '''
    2D cross-correlation by im2col

    Parameters:
    -----------
    x: ndarray (N, C, H, W)
    weight: ndarray (O, C, kh, kw)
    bias: ndarray (O,), optional

    Returns:
    --------
    ndarray (N, O, Ho, Wo)
    '''
    O, C, kh, kw = weight.shape
    cols = _windows(x, kh, kw, stride, padding)       # (N, C, Ho, Wo, kh, kw)
    out = np.tensordot(cols, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out)


def conv2d_transpose(y, weight, in_hw, stride=1, padding=0):
    '''Adjoint of `conv2d` without bias, mapping (N, O, Ho, Wo) back to (N, C, H, W)'''
    O, C, kh, kw = weight.shape
    N, _, Ho, Wo = y.shape
    H, W = in_hw
    cols = np.tensordot(y, weight, axes=([1], [0]))   # (N, Ho, Wo, C, kh, kw)
    xp = np.zeros((N, C, H + 2*padding, W + 2*padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride*Ho:stride, j:j + stride*Wo:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return xp[:, :, padding:padding + H, padding:padding + W]


def _pool_out(n, k, s):
    return (n - k)//s + 1


class Layer():
    '''
    Base layer

    Subclasses declare `kind`, the names of their array parameters
    in `param_names` and of their scalar hyperparameters in `hyper_names`.
    '''
    kind = None
    linear = False
    param_names = ()
    hyper_names = ()

    @property
    def params(self):
        return {name: getattr(self, name) for name in self.param_names
                if getattr(self, name) is not None}

    @property
    def hyper(self):
        return {name: getattr(self, name) for name in self.hyper_names}

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return x

    def copy(self):
        new = object.__new__(type(self))
        for key, val in self.__dict__.items():
            setattr(new, key, val.copy() if isinstance(val, np.ndarray) else val)
        return new

    def __eq__(self, other):
        if type(self) is not type(other) or self.hyper != other.hyper:
            return False
        a, b = self.params, other.params
        if a.keys() != b.keys():
            return False
        return all(np.array_equal(a[k], b[k]) for k in a)

    def __repr__(self):
        hyper = ', '.join(f'{k}={v}' for k, v in self.hyper.items())
        shapes = ', '.join(f'{k}{v.shape}' for k, v in self.params.items())
        return f'{self.kind}({", ".join(s for s in (hyper, shapes) if s)})'


class Dense(Layer):
    kind = 'Dense'
    linear = True
    param_names = ('weight', 'bias')

    def __init__(self, weight, bias=None):
        self.weight = np.asarray(weight, dtype=np.float32)
        if self.weight.ndim != 2:
            raise ShapeMismatchError(f'Dense weight must be 2-D (out, in), got {self.weight.shape}')
        out_features = self.weight.shape[0]
        if bias is None:
            bias = np.zeros(out_features, dtype=np.float32)
        self.bias = np.asarray(bias, dtype=np.float32).reshape(-1)
        if self.bias.shape != (out_features,):
            raise ShapeMismatchError(f'Dense bias of length {self.bias.size} for {out_features} outputs')

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeMismatchError(f'Dense expects input ({self.in_features},), got {tuple(in_shape)}')
        return (self.out_features,)

    def forward(self, x, bias=True):
        out = x @ self.weight.T
        if bias:
            out = out + self.bias
        return out

    def adjoint(self, y):
        return y @ self.weight


class Conv2d(Layer):
    kind = 'Conv2d'
    linear = True
    param_names = ('weight', 'bias')
    hyper_names = ('stride', 'padding')

    def __init__(self, weight, bias=None, stride=1, padding=0):
        self.weight = np.asarray(weight, dtype=np.float32)
        if self.weight.ndim != 4:
            raise ShapeMismatchError(f'Conv2d weight must be 4-D (O, C, kh, kw), got {self.weight.shape}')
        if bias is None:
            bias = np.zeros(self.weight.shape[0], dtype=np.float32)
        self.bias = np.asarray(bias, dtype=np.float32).reshape(-1)
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatchError(f'Conv2d bias of length {self.bias.size} for {self.weight.shape[0]} channels')
        self.stride = int(stride)
        self.padding = int(padding)
        if self.stride < 1 or self.padding < 0:
            raise GraphError(f'Conv2d stride must be >= 1 and padding >= 0')

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def kernel_size(self):
        return self.weight.shape[2:]

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeMismatchError(f'Conv2d expects input ({self.in_channels}, H, W), got {tuple(in_shape)}')
        kh, kw = self.kernel_size
        Ho = (in_shape[1] + 2*self.padding - kh)//self.stride + 1
        Wo = (in_shape[2] + 2*self.padding - kw)//self.stride + 1
        if Ho < 1 or Wo < 1:
            raise ShapeMismatchError(f'Conv2d kernel {kh}x{kw} larger than padded input {tuple(in_shape)}')
        return (self.out_channels, Ho, Wo)

    def forward(self, x, bias=True):
        return conv2d(x, self.weight, self.bias if bias else None,
                      stride=self.stride, padding=self.padding)

    def adjoint(self, y, in_hw):
        return conv2d_transpose(y, self.weight, in_hw, stride=self.stride, padding=self.padding)


class MaxPool(Layer):
    kind = 'MaxPool'
    hyper_names = ('kernel', 'stride')

    def __init__(self, kernel, stride=None):
        self.kernel = int(kernel)
        self.stride = int(stride) if stride is not None else self.kernel
        if self.kernel < 1 or self.stride < 1:
            raise GraphError(f'{self.kind} kernel and stride must be >= 1')

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatchError(f'{self.kind} expects a (C, H, W) input, got {tuple(in_shape)}')
        C, H, W = in_shape
        Ho, Wo = _pool_out(H, self.kernel, self.stride), _pool_out(W, self.kernel, self.stride)
        if Ho < 1 or Wo < 1:
            raise ShapeMismatchError(f'{self.kind} window {self.kernel} larger than input {tuple(in_shape)}')
        return (C, Ho, Wo)

    def forward(self, x):
        return _windows(x, self.kernel, self.kernel, self.stride).max(axis=(4, 5))


class PreNeuronMaxPool(MaxPool):
    '''Max pooling applied to pre-activations (currents) ahead of the neuron slot'''
    kind = 'PreNeuronMaxPool'


class AvgPool(MaxPool):
    kind = 'AvgPool'

    def forward(self, x):
        return _windows(x, self.kernel, self.kernel, self.stride).mean(axis=(4, 5))

    def adjoint(self, y, in_hw):
        x = np.zeros(y.shape[:2] + tuple(in_hw), dtype=y.dtype)
        k, s = self.kernel, self.stride
        Ho, Wo = y.shape[2:]
        for i in range(k):
            for j in range(k):
                x[:, :, i:i + s*Ho:s, j:j + s*Wo:s] += y / (k*k)
        return x


class BatchNorm(Layer):
    kind = 'BatchNorm'
    param_names = ('gamma', 'beta', 'mean', 'var')
    hyper_names = ('eps',)

    def __init__(self, gamma, beta, mean, var, eps=1e-5):
        self.gamma = np.asarray(gamma, dtype=np.float32).reshape(-1)
        self.beta = np.asarray(beta, dtype=np.float32).reshape(-1)
        self.mean = np.asarray(mean, dtype=np.float32).reshape(-1)
        self.var = np.asarray(var, dtype=np.float32).reshape(-1)
        self.eps = float(eps)
        n = self.gamma.size
        if any(p.size != n for p in (self.beta, self.mean, self.var)):
            raise ShapeMismatchError('BatchNorm statistics must share one channel count')

    @property
    def channels(self):
        return self.gamma.size

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeMismatchError(f'BatchNorm over {self.channels} channels got input {tuple(in_shape)}')
        return tuple(in_shape)

    def scale_shift(self):
        '''Affine form (scale, shift) in float64'''
        scale = self.gamma.astype(np.float64) / np.sqrt(self.var.astype(np.float64) + self.eps)
        shift = self.beta.astype(np.float64) - self.mean.astype(np.float64)*scale
        return scale, shift

    def forward(self, x):
        scale, shift = self.scale_shift()
        return x*channel_view(scale, x.ndim) + channel_view(shift, x.ndim)


class ResidualAdd(Layer):
    '''
    Adds the output of an earlier layer `source` to the running tensor.
    `scale` is an optional per-channel factor applied to the skip branch.
    '''
    kind = 'ResidualAdd'
    param_names = ('scale',)
    hyper_names = ('source',)

    def __init__(self, source, scale=None):
        self.source = int(source)
        self.scale = None if scale is None else np.asarray(scale, dtype=np.float32).reshape(-1)

    def output_shape(self, in_shape, skip_shape=None):
        if skip_shape is not None and tuple(skip_shape) != tuple(in_shape):
            raise ShapeMismatchError(f'residual skip {tuple(skip_shape)} does not match {tuple(in_shape)}')
        if self.scale is not None and self.scale.size not in (1, in_shape[0]):
            raise ShapeMismatchError(f'residual scale of length {self.scale.size} for {in_shape[0]} channels')
        return tuple(in_shape)

    def forward(self, x, skip):
        if self.scale is not None:
            skip = skip*channel_view(self.scale, skip.ndim)
        return x + skip


class Flatten(Layer):
    kind = 'Flatten'

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)


class Activation(Layer):
    '''
    Activation slot. `theta` is None for a plain ReLU network, else a
    float64 vector of length 1 (layer-wise) or one entry per channel.
    '''
    kind = 'Activation'
    param_names = ('theta',)

    def __init__(self, theta=None):
        self.theta = None if theta is None else np.asarray(theta, dtype=np.float64).reshape(-1)

    def output_shape(self, in_shape):
        if self.theta is not None and self.theta.size not in (1, in_shape[0]):
            raise ShapeMismatchError(f'threshold of length {self.theta.size} for {in_shape[0]} channels')
        return tuple(in_shape)

    def forward(self, z, mode='relu'):
        if mode == 'relu':
            return np.maximum(z, 0)
        if self.theta is None:
            raise GraphError('clip activation without a threshold')
        return np.minimum(np.maximum(z, 0), channel_view(self.theta, z.ndim))


layer_lib = {cls.kind: cls for cls in (Dense, Conv2d, MaxPool, PreNeuronMaxPool,
                                        AvgPool, BatchNorm, ResidualAdd, Flatten, Activation)}


def make_layer(kind, params=None, hyper=None):
    '''Build a layer from its kind name, array parameters and hyperparameters'''
    if kind not in layer_lib:
        raise GraphError(f'unknown layer kind "{kind}"')
    kwargs = dict(hyper or {})
    kwargs.update(params or {})
    return layer_lib[kind](**kwargs)
