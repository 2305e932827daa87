# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

import numpy as np
from scipy.linalg import svdvals

from .layers import Dense, Conv2d, AvgPool
from .errors import GraphError, ConfigError
from .constants import POWER_ITERS, POWER_TOL


def weight_matrix(weight):
    '''2-D view of a weight: conv kernels become out_channels x (in_channels*kh*kw)'''
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim == 1:
        return w.reshape(1, -1)
    return w.reshape(w.shape[0], -1)


def pow_method(A, At, x0, tol=POWER_TOL, max_iters=POWER_ITERS):
    '''
    Largest eigenvalue of At(A(.)) by power iteration

    Parameters:
    -----------
    A, At: callable
        Direct and adjoint operators
    x0: ndarray
        Starting point, any shape accepted by A
    tol: float
        Stopping criterion on the relative change of the estimate
    max_iters: int
        Maximum number of iterations

    Returns:
    --------
    float
        Estimate of the largest eigenvalue, i.e. the squared spectral norm
    '''
    x = x0 / np.linalg.norm(x0)
    val = 0.
    for it in range(int(max_iters)):
        x = At(A(x))
        new = np.linalg.norm(x)
        if new == 0.:
            return 0.
        x /= new
        if abs(new - val) <= tol*new:
            val = new
            break
        val = new
    return val


def spectral_norm(weight, max_iters=POWER_ITERS, tol=POWER_TOL, method='power'):
    '''
    Largest singular value of a Dense or Conv2d weight

    Conv kernels are flattened to out_channels x fan-in, a proxy for the
    norm of the convolution operator (see `operator_norm` for the exact one).

    Parameters:
    -----------
    weight: ndarray
        Weight matrix (out, in) or kernel (O, C, kh, kw)
    max_iters: int, default 10000
    tol: float, default 1e-12
        Relative change of the estimate below which iteration stops
    method: str, default 'power'
        'power' for power iteration, 'svd' for a dense singular value
        decomposition

    Returns:
    --------
    float
        The spectral norm, 0. for a zero matrix
    '''
    if max_iters < 1 or tol <= 0:
        raise ConfigError('spectral_norm needs max_iters >= 1 and tol > 0')
    w = weight_matrix(weight)
    if not np.any(w):
        return 0.
    if method == 'svd':
        return float(svdvals(w)[0])
    if method != 'power':
        raise ConfigError(f'unknown spectral norm method "{method}"')

    x0 = np.random.default_rng(0).standard_normal(w.shape[1])
    lam = pow_method(lambda x: w @ x, lambda y: w.T @ y, x0, tol=tol, max_iters=max_iters)
    return float(np.sqrt(lam))


def operator_norm(layer, input_shape, max_iters=POWER_ITERS, tol=POWER_TOL):
    '''
    2-norm of the linear map a layer applies to one sample (bias excluded)

    Parameters:
    -----------
    layer: Dense, Conv2d or AvgPool
    input_shape: tuple
        Per-sample input shape of the layer
    '''
    if isinstance(layer, Dense):
        return spectral_norm(layer.weight, max_iters=max_iters, tol=tol)

    if isinstance(layer, Conv2d):
        A = lambda x: layer.forward(x, bias=False)
        At = lambda y: layer.adjoint(y, input_shape[1:])
    elif isinstance(layer, AvgPool):
        A = layer.forward
        At = lambda y: layer.adjoint(y, input_shape[1:])
    else:
        raise GraphError(f'no operator norm for a {layer.kind} layer')

    x0 = np.random.default_rng(0).standard_normal((1,) + tuple(input_shape))
    lam = pow_method(A, At, x0, tol=tol, max_iters=max_iters)
    return float(np.sqrt(lam))
