# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

'''
Conversion quality and energy figures of a converted network
'''

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import (Dense, Conv2d, MaxPool, PreNeuronMaxPool, AvgPool, BatchNorm, ResidualAdd,
                     Flatten, Activation)
from .spectral import spectral_norm, operator_norm
from .solverIF import SolverIF
from .modelIO import as_array
from .logger import get_logger
from .errors import ConfigError, GraphError, ShapeMismatchError
from .constants import energy_lib, NORM_VARIANTS


def write_csv(filename, header, rows, fmt):
    '''Write rows of mixed values with np.savetxt'''
    data = np.array(rows, dtype=object).reshape(-1, len(header))
    np.savetxt(filename, data, fmt=fmt, delimiter=',', header=','.join(header), comments='')


def format_table(header, rows, fmt):
    '''Aligned text table of the same rows written by `write_csv`'''
    cells = [list(header)] + [[f % v for f, v in zip(fmt, row)] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(header))]
    lines = ['  '.join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
    lines.insert(1, '  '.join('-'*w for w in widths))
    return '\n'.join(lines)


def _sample_norms(diff):
    diff = np.asarray(diff, dtype=np.float64)
    return np.linalg.norm(diff.reshape(diff.shape[0], -1), axis=1)


# ---------- conversion error ---------- #

@dataclass
class ErrorReport:
    '''
    Per-slot conversion errors and the propagated error bound

    rows: one dict per activation slot with
        slot, layer, error (measured e), intra (intra-layer error eps),
        proxy (clip-based estimate used while balancing), norm (gain from
        the previous slot to this one), factor (gain from the slot to the output)
    bound: bound on the output error
    e_model: measured output error
    '''
    T: int
    rows: list = field(default_factory=list)
    bound: float = float('nan')
    e_model: float = float('nan')
    readout_norm: float = 1.
    norm_variant: str = 'reshaped'

    header = ('slot', 'layer', 'error', 'intra', 'proxy', 'norm', 'factor')
    fmt = ('%d', '%d', '%.8g', '%.8g', '%.8g', '%.8g', '%.8g')

    def _rows(self):
        return [tuple(r[k] for k in self.header) for r in self.rows]

    def to_csv(self, filename='error_report.csv'):
        rows = self._rows() + [(-1, -1, self.e_model, float('nan'), float('nan'),
                                self.readout_norm, self.bound)]
        write_csv(filename, self.header, rows, self.fmt)

    def table(self):
        txt = format_table(self.header, self._rows(), self.fmt)
        return (f'{txt}\n'
                f'norm variant: {self.norm_variant}   T = {self.T}\n'
                f'measured e_model = {self.e_model:.8g}   bound = {self.bound:.8g}')


def _ann_slot_activations(graph, x):
    return graph.forward_ann(x, mode='relu')


def conversion_error(ann, snn, batch, T, layer):
    '''
    Mean over the batch of || S(z_hat) - ReLU(z) ||_2 at activation slot `layer`

    S is the average postsynaptic potential of the spiking slot over T
    steps, ReLU(z) the activation of the analog network.

    Parameters:
    -----------
    ann: NetworkGraph
        Analog network, evaluated with ReLU activations
    snn: NetworkGraph
        Same weights with finalized thresholds
    batch: ndarray or DatasetBatch
    T: int
    layer: int
        Ordinal of the activation slot (0 = first slot)
    '''
    if int(T) < 1:
        raise ConfigError(f'T must be >= 1, got {T}')
    if not 0 <= layer < len(snn.slots) or len(ann.slots) != len(snn.slots):
        raise GraphError(f'no activation slot {layer} shared by both graphs')
    x = np.asarray(as_array(batch), dtype=np.float64)
    a = _ann_slot_activations(ann, x).post[layer]
    solver = SolverIF(snn)
    solver.simulate(x, int(T))
    state = solver.states[layer]
    r = state.spike_count*state.theta_view / int(T)
    return float(np.mean(_sample_norms(r - a)))


def _lipschitz(layer, in_shape, norm, method):
    if isinstance(layer, (Dense, Conv2d)):
        if norm == 'operator':
            return operator_norm(layer, in_shape)
        return spectral_norm(layer.weight, method=method)
    if isinstance(layer, AvgPool):
        return operator_norm(layer, in_shape) if norm == 'operator' else 1.
    if isinstance(layer, PreNeuronMaxPool):
        # an input element sits in at most ceil(k/s)**2 windows
        return float(math.ceil(layer.kernel / layer.stride))
    if isinstance(layer, Flatten):
        return 1.
    raise GraphError(f'no Lipschitz constant for {layer.kind}')


def _residual_gain(layer):
    return 1. if layer.scale is None else float(np.max(np.abs(layer.scale)))


def error_gains(graph, norm='reshaped', method='power'):
    '''
    Gains of the conversion errors through the graph

    Every layer output error is bounded by a weighted sum of the errors
    made at the slots; entry j of a gain vector weighs the network input
    (j = 0) or slot j-1. Weight layers scale the vector by their norm,
    residual joins add the gains of their source scaled by max|scale|
    and every slot adds its own error with weight 1.

    Returns:
    --------
    (list, ndarray)
        Gain vector at the input of every slot, gain vector of the output
    '''
    n = len(graph.slots)
    shapes = [graph.input_shape] + list(graph.shapes)
    g = np.zeros(n + 1)
    g[0] = 1.
    gains, slot_in = [], []
    k = 0
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, Activation):
            slot_in.append(g.copy())
            k += 1
            g = g.copy()
            g[k] += 1.
        elif isinstance(layer, ResidualAdd):
            g = g + _residual_gain(layer)*gains[layer.source]
        else:
            g = g*_lipschitz(layer, shapes[i], norm, method)
        gains.append(g)
    return slot_in, g


def _rate_forward(graph, x, rates):
    '''Analog layers applied to the spiking rates, returns the input of every slot'''
    outputs, slot_inputs = [], []
    k = 0
    for layer in graph.layers:
        if isinstance(layer, Activation):
            slot_inputs.append(x)
            x = rates[k]
            k += 1
        elif isinstance(layer, ResidualAdd):
            x = layer.forward(x, outputs[layer.source])
        else:
            x = layer.forward(x)
        outputs.append(x)
    return slot_inputs


def error_bound(graph, batch, T, norm='reshaped', method='power'):
    '''
    Measured conversion errors against their propagated bound

        e_model <= sum_l G_l * eps_l

    eps_l = || S(z_hat_l) - ReLU(z_hat_l) || with z_hat_l the input of slot
    l rebuilt by running the analog layers on the spiking rates of the
    earlier slots, G_l the gain from slot l to the output: the product of
    the layer norms on a chain, summed over the paths through residual
    joins. Pre-neuron max pooling is counted with its window overlap, so
    its step by step pooling gap ends up in eps of the next slot.

    Parameters:
    -----------
    graph: NetworkGraph
        Graph with finalized thresholds
    batch: ndarray or DatasetBatch
    T: int
        Simulation length, the output is averaged over all T steps
    norm: str, default 'reshaped'
        'reshaped' uses the flattened kernel spectral norm for conv layers,
        'operator' the norm of the convolution operator
    method: str, default 'power'
        Spectral norm method, 'power' or 'svd'

    Returns:
    --------
    ErrorReport
    '''
    if norm not in NORM_VARIANTS:
        raise ConfigError(f'norm must be one of {NORM_VARIANTS}, got "{norm}"')
    if int(T) < 1:
        raise ConfigError(f'T must be >= 1, got {T}')
    T = int(T)
    x = np.asarray(as_array(batch), dtype=np.float64)

    ann = _ann_slot_activations(graph, x)
    solver = SolverIF(graph)
    out_snn, _ = solver.simulate(x, T)

    report = ErrorReport(T=T, norm_variant=norm)
    report.e_model = float(np.mean(_sample_norms(out_snn - ann.output)))

    slot_in, out_gain = error_gains(graph, norm=norm, method=method)
    report.readout_norm = float(out_gain[-1])

    rates = [state.spike_count*state.theta_view / T for state in solver.states]
    zhat = _rate_forward(graph, x, rates)

    bound = 0.
    for k, (i, r) in enumerate(zip(graph.slots, rates)):
        z = ann.pre[k]
        row = {
            'slot': k,
            'layer': i,
            'error': float(np.mean(_sample_norms(r - ann.post[k]))),
            'intra': float(np.mean(_sample_norms(r - np.maximum(zhat[k], 0)))),
            'proxy': float(np.mean(_sample_norms(graph.layers[i].forward(z, mode='clip')
                                                 - np.maximum(z, 0)))),
            # gain from the previous slot, or from the input for the first one
            'norm': float(slot_in[k][k]),
            'factor': float(out_gain[k + 1]),
        }
        bound += row['factor'] * row['intra']
        report.rows.append(row)
    report.bound = float(bound)
    get_logger().debug(f'{norm} error bound {report.bound:.6g}, measured {report.e_model:.6g}')

    return report


# ---------- synaptic operations ---------- #

def _cover(n_in, n_out, k, stride, pad):
    '''Number of windows covering each input position along one axis'''
    cover = np.zeros(n_in, dtype=np.int64)
    for o in range(n_out):
        lo = o*stride - pad
        for j in range(k):
            if 0 <= lo + j < n_in:
                cover[lo + j] += 1
    return cover


def fanout(graph, index):
    '''Synapses driven by each element of the output of layer `index`, per sample'''
    shape = tuple(graph.shapes[index])
    f = np.zeros(shape, dtype=np.int64)
    if index + 1 < len(graph.layers):
        f = f + _consumer_fanout(graph, index + 1, shape)
    n_skips = sum(1 for l in graph.layers if isinstance(l, ResidualAdd) and l.source == index)
    return f + n_skips


def _consumer_fanout(graph, k, in_shape):
    layer = graph.layers[k]
    if isinstance(layer, Dense):
        return np.full(in_shape, layer.out_features, dtype=np.int64)
    if isinstance(layer, Conv2d):
        kh, kw = layer.kernel_size
        _, Ho, Wo = graph.shapes[k]
        cy = _cover(in_shape[1], Ho, kh, layer.stride, layer.padding)
        cx = _cover(in_shape[2], Wo, kw, layer.stride, layer.padding)
        per_pos = layer.out_channels * cy[:, None] * cx[None, :]
        return np.broadcast_to(per_pos, in_shape).copy()
    if isinstance(layer, AvgPool):
        g = fanout(graph, k)
        cy = np.zeros(in_shape, dtype=np.int64)
        kk, s = layer.kernel, layer.stride
        Ho, Wo = g.shape[1:]
        for i in range(kk):
            for j in range(kk):
                cy[:, i:i + s*Ho:s, j:j + s*Wo:s] += g
        return cy
    if isinstance(layer, Flatten):
        return fanout(graph, k).reshape(in_shape)
    if isinstance(layer, (ResidualAdd, Activation)):
        return np.ones(in_shape, dtype=np.int64)
    if isinstance(layer, MaxPool):
        # comparator work, counted by comparator_ops
        return np.zeros(in_shape, dtype=np.int64)
    raise GraphError(f'layer {k}: no synaptic fan-out for {layer.kind}')


def _check_trace(trace, graph):
    if list(trace.slot_layers) != graph.slots or \
            [tuple(s) for s in trace.slot_shapes] != [tuple(graph.shapes[i]) for i in graph.slots]:
        raise ShapeMismatchError('spike trace was not produced by this graph')
    if any(isinstance(l, BatchNorm) for l in graph.layers):
        raise GraphError('fold BatchNorm before counting synaptic operations')


def sops_per_slot(trace, graph):
    '''Synaptic operations caused by the spikes of each slot'''
    _check_trace(trace, graph)
    return [int(np.sum(c.astype(np.int64) * fanout(graph, i)))
            for i, c in zip(trace.slot_layers, trace.counts)]


def count_sops(trace, graph):
    '''
    Synaptic operations of a simulation: every spike times the number of
    structural synapses it reaches (kernel taps and output positions for
    conv layers, average pooling folded into the next consumer)
    '''
    return int(sum(sops_per_slot(trace, graph)))


def comparator_ops(trace, graph):
    '''Comparisons of pre-neuron max pooling: one per window element, output and timestep'''
    _check_trace(trace, graph)
    ops = 0
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, MaxPool) and not isinstance(layer, AvgPool):
            ops += int(np.prod(graph.shapes[i])) * layer.kernel**2
    return ops * trace.T * trace.frames


def flops_per_layer(graph):
    '''(layer index, FLOPs) of every Dense and Conv2d layer for one input'''
    counts = []
    for i, layer in enumerate(graph.layers):
        if isinstance(layer, Dense):
            counts.append((i, 2*layer.in_features*layer.out_features + layer.out_features))
        elif isinstance(layer, Conv2d):
            O, Ho, Wo = graph.shapes[i]
            kh, kw = layer.kernel_size
            macs = layer.in_channels*kh*kw * O*Ho*Wo
            counts.append((i, 2*macs + O*Ho*Wo))
    return counts


def count_flops(graph):
    '''Analog FLOPs for one input: 2 per multiply-accumulate plus one per bias add'''
    return int(sum(n for _, n in flops_per_layer(graph)))


# ---------- energy ---------- #

@dataclass
class EnergyReport:
    '''
    Energy estimate of `frames` processed inputs, counts are totals over them

    snn_energy = sops * 77 fJ, ann_energy = flops * 12.5 pJ;
    frames per joule equals frames per second per watt
    '''
    sops: int
    flops: int
    frames: int
    comparator_ops: int = 0
    T: int = 0

    @property
    def snn_energy(self):
        return self.sops * energy_lib['sop']

    @property
    def ann_energy(self):
        return self.flops * energy_lib['flop']

    @property
    def snn_frames_per_joule(self):
        return self.frames / self.snn_energy if self.snn_energy > 0 else float('inf')

    @property
    def ann_frames_per_joule(self):
        return self.frames / self.ann_energy if self.ann_energy > 0 else float('inf')

    header = ('T', 'frames', 'sops', 'comparator_ops', 'flops', 'snn_joules', 'ann_joules',
              'snn_frames_per_joule', 'ann_frames_per_joule')
    fmt = ('%d', '%d', '%d', '%d', '%d', '%.6g', '%.6g', '%.6g', '%.6g')

    def row(self):
        return (self.T, self.frames, self.sops, self.comparator_ops, self.flops,
                self.snn_energy, self.ann_energy,
                self.snn_frames_per_joule, self.ann_frames_per_joule)

    def to_csv(self, filename='energy.csv'):
        write_csv(filename, self.header, [self.row()], self.fmt)

    def table(self):
        return format_table(self.header, [self.row()], self.fmt)


def energy_report(sops, flops, frames, comparator_ops=0, T=0):
    '''Apply the per-operation energy costs to SOP and FLOP totals over `frames` inputs'''
    if int(frames) < 1:
        raise ConfigError(f'frames must be >= 1, got {frames}')
    if sops < 0 or flops < 0:
        raise ConfigError('operation counts must be non-negative')
    return EnergyReport(sops=int(sops), flops=int(flops), frames=int(frames),
                        comparator_ops=int(comparator_ops), T=int(T))


def sops_at_accuracy(rows, ann_accuracy, fractions=(0.9, 0.95)):
    '''
    SOPs per frame needed to reach a fraction of the analog accuracy

    Parameters:
    -----------
    rows: list of (T, accuracy, sops_per_frame)
    ann_accuracy: float
    fractions: tuple, default (0.9, 0.95)

    Returns:
    --------
    list of dict (fraction, T, sops_per_frame, frames_per_joule);
    T and the figures are None when no row reaches the fraction
    '''
    rows = sorted(rows, key=lambda r: r[0])
    out = []
    for frac in fractions:
        hit = next((r for r in rows if r[1] >= frac*ann_accuracy), None)
        if hit is None:
            out.append({'fraction': frac, 'T': None, 'sops_per_frame': None,
                        'frames_per_joule': None})
            continue
        energy = hit[2]*energy_lib['sop']
        out.append({'fraction': frac, 'T': int(hit[0]), 'sops_per_frame': float(hit[2]),
                    'frames_per_joule': 1./energy if energy > 0 else float('inf')})
    return out
