# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

import math
from dataclasses import dataclass

import numpy as np
import h5py
from tqdm import tqdm

from .layers import MaxPool, BatchNorm, ResidualAdd, Activation, channel_view
from .modelIO import as_array
from .routines import RoutinesMixin
from .logger import LogMixin, get_logger
from .errors import (ConfigError, GraphError, ShapeMismatchError, ThresholdError,
                     EmptyDataError, InvariantError)
from .constants import DELAY_WINDOW, T0_EPS


@dataclass
class SimConfig:
    '''
    T: total number of timesteps
    t0: the output is averaged over steps t0+1 .. T
    record_trace: keep per-timestep spike totals in the trace
    '''
    T: int
    t0: int = 0
    record_trace: bool = False

    def validate(self):
        if int(self.T) < 1:
            raise ConfigError(f'T must be >= 1, got {self.T}')
        if not 0 <= int(self.t0) <= int(self.T) - 1:
            raise ConfigError(f't0 must be in [0, T-1] = [0, {int(self.T) - 1}], got {self.t0}')
        return self


@dataclass
class IFLayerState:
    '''
    Integrate-and-fire state of one activation slot for a batch

    v: membrane potentials (N, *slot shape), float64
    theta: thresholds, one per slot or per channel
    spike_count: spikes emitted per neuron since the last reset
    current_sum: input current integrated per neuron since the last reset
    '''
    v: np.ndarray
    theta: np.ndarray
    spike_count: np.ndarray = None
    current_sum: np.ndarray = None
    v0: np.ndarray = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.v0 is None:
            self.v0 = self.v.copy()
        if self.spike_count is None:
            self.spike_count = np.zeros(self.v.shape, dtype=np.int64)
        if self.current_sum is None:
            self.current_sum = np.zeros(self.v.shape, dtype=np.float64)

    @property
    def theta_view(self):
        return channel_view(self.theta, self.v.ndim)

    def reset(self):
        self.v = self.v0.copy()
        self.spike_count[...] = 0
        self.current_sum[...] = 0.


def step(state, input_current):
    '''
    One integrate-and-fire update with reset by subtraction

    v <- v + I;  s = 1 where v >= theta;  v <- v - theta*s

    Returns:
    --------
    ndarray of 0./1. spikes, shaped like the membrane
    '''
    current = np.asarray(input_current, dtype=np.float64)
    if current.shape != state.v.shape:
        raise ShapeMismatchError(f'input current {current.shape} for membrane {state.v.shape}')
    theta = state.theta_view
    state.v += current
    state.current_sum += current
    fired = state.v >= theta
    state.v -= theta*fired
    state.spike_count += fired
    return fired.astype(np.float64)


def _check_thetas(graph):
    if graph.activation_mode == 'relu':
        raise ThresholdError('spiking simulation needs a graph with finalized thresholds')
    for i in graph.slots:
        theta = graph.layers[i].theta
        if theta is None or np.any(~(theta > 0)) or not np.all(np.isfinite(theta)):
            raise ThresholdError(f'layer {i}: thresholds must be finite and strictly positive')


def init_membrane(graph, batch_size=1):
    '''Fresh state for every activation slot, membrane at half the threshold'''
    _check_thetas(graph)
    states = []
    for i in graph.slots:
        theta = graph.layers[i].theta.astype(np.float64)
        shape = (int(batch_size),) + tuple(graph.shapes[i])
        v = np.broadcast_to(channel_view(theta, len(shape)) / 2., shape).copy()
        states.append(IFLayerState(v=v, theta=theta))
    return states


@dataclass
class SpikeTrace:
    '''
    Spike statistics of a simulation

    counts[k]: spikes per neuron of slot k over the run, summed over frames
    step_counts: (T, n_slots) spike totals per timestep, if recorded
    '''
    T: int
    t0: int
    frames: int
    slot_layers: list
    slot_shapes: list
    counts: list
    step_counts: np.ndarray = None

    @property
    def neurons(self):
        return [int(np.prod(s)) for s in self.slot_shapes]

    @property
    def totals(self):
        return [int(c.sum()) for c in self.counts]

    @property
    def total_spikes(self):
        return int(sum(self.totals))

    def merge(self, other):
        '''Combine the traces of two batches simulated with the same T'''
        if (self.T, self.slot_layers) != (other.T, other.slot_layers):
            raise ShapeMismatchError('cannot merge traces of different runs')
        steps = None
        if self.step_counts is not None and other.step_counts is not None:
            steps = self.step_counts + other.step_counts
        return SpikeTrace(T=self.T, t0=self.t0, frames=self.frames + other.frames,
                          slot_layers=list(self.slot_layers), slot_shapes=list(self.slot_shapes),
                          counts=[a + b for a, b in zip(self.counts, other.counts)],
                          step_counts=steps)

    def to_csv(self, filename='trace.csv', bucket=1):
        '''Rows of (layer, first timestep of the bucket, spike count)'''
        if self.step_counts is None:
            raise ConfigError('trace was recorded without per-timestep counts')
        bucket = max(int(bucket), 1)
        rows = []
        for k, layer in enumerate(self.slot_layers):
            for start in range(0, self.T, bucket):
                rows.append((layer, start + 1, int(self.step_counts[start:start + bucket, k].sum())))
        np.savetxt(filename, np.array(rows, dtype=np.int64).reshape(-1, 3), fmt='%d',
                   delimiter=',', header='layer,timestep,spikes', comments='')


class SolverIF(LogMixin, RoutinesMixin):

    def __init__(self, graph, verbose=0):
        '''
        Time-stepped integrate-and-fire simulation of a converted graph.

        The analog input is fed to the first layer at every timestep,
        biases act as constant currents, spikes leave a slot with the
        amplitude of its threshold, pre-neuron max pooling and residual
        joins act on currents. Slots are updated in graph order.

        Parameters:
        -----------
        graph: NetworkGraph
            Graph in clip or if mode with finalized thresholds
        verbose: int or bool, default 0
            Enable progress bars and log messages on the terminal

        Attributes
        ----------
        states: list of IFLayerState
            Membrane state of every activation slot
        n: int
            Timesteps run since the last reset
        '''
        self.verbose = verbose
        _check_thetas(graph)
        for i, layer in enumerate(graph.layers):
            if type(layer) is MaxPool or isinstance(layer, BatchNorm):
                raise GraphError(f'layer {i}: {layer.kind} must be prepared before simulation')
        self.graph = graph if graph.activation_mode == 'if' else graph.as_mode('if')
        self.slots = self.graph.slots
        self.states = []
        self.n = 0
        self.record_trace = False
        self._steps = []

    def reset(self, batch_size):
        '''Membrane back to half threshold, counters to zero'''
        self.states = init_membrane(self.graph, batch_size)
        self.n = 0
        self._steps = []

    def one_step(self, x):
        '''
        Advance every layer by one timestep

        Parameters:
        -----------
        x: ndarray (N, *input_shape)
            Analog input current of this timestep

        Returns:
        --------
        ndarray
            Output of the last layer at this timestep
        '''
        outputs = []
        k = 0
        for layer in self.graph.layers:
            if isinstance(layer, Activation):
                state = self.states[k]
                x = step(state, x) * state.theta_view
                k += 1
            elif isinstance(layer, ResidualAdd):
                x = layer.forward(x, outputs[layer.source])
            else:
                x = layer.forward(x)
            outputs.append(x)
        self.n += 1
        if self.record_trace:
            self._steps.append([int(s.spike_count.sum()) for s in self.states])
        return x

    def check_invariants(self):
        '''
        Raise InvariantError if a neuron fired more often than the
        timesteps run or a membrane potential is no longer finite
        '''
        for i, s in zip(self.slots, self.states):
            if np.any(s.spike_count > self.n) or np.any(s.spike_count < 0):
                raise InvariantError(f'layer {i}: spike count outside [0, {self.n}] '
                                     f'after {self.n} timesteps')
            if not np.all(np.isfinite(s.v)):
                raise InvariantError(f'layer {i}: membrane potential is not finite')

    def simulate(self, batch, T, t0=0, record_trace=False):
        '''
        Run T timesteps on a batch and average the output over t0+1 .. T

        Parameters:
        -----------
        batch: ndarray or DatasetBatch
        T: int
            Number of timesteps
        t0: int, default 0
            Delayed start of the output average, 0 <= t0 <= T-1
        record_trace: bool, default False
            Keep per-timestep spike totals in the returned trace

        Returns:
        --------
        (ndarray, SpikeTrace)
        '''
        cfg = SimConfig(T=int(T), t0=int(t0), record_trace=record_trace).validate()
        x = np.asarray(as_array(batch), dtype=np.float64)
        if tuple(x.shape[1:]) != self.graph.input_shape:
            raise ShapeMismatchError(f'batch of shape {x.shape} for input {self.graph.input_shape}',
                                     layer_index=0)
        self.record_trace = cfg.record_trace
        self.reset(x.shape[0])

        acc = None
        for t in tqdm(range(1, cfg.T + 1), disable=not self.verbose):
            out = self.one_step(x)
            if t > cfg.t0:
                acc = out.copy() if acc is None else acc + out
        self.check_invariants()
        output = acc / (cfg.T - cfg.t0)

        return output, self.trace(t0=cfg.t0)

    def trace(self, t0=0):
        '''SpikeTrace of the run so far'''
        frames = self.states[0].v.shape[0] if self.states else 0
        steps = None
        if self.record_trace:
            cumulative = np.array(self._steps, dtype=np.int64).reshape(self.n, len(self.states))
            steps = np.diff(cumulative, axis=0, prepend=np.zeros((1, len(self.states)), dtype=np.int64))
        return SpikeTrace(T=self.n, t0=t0, frames=frames, slot_layers=list(self.slots),
                          slot_shapes=[tuple(self.graph.shapes[i]) for i in self.slots],
                          counts=[s.spike_count.sum(axis=0) for s in self.states],
                          step_counts=steps)

    def save_state(self, filename='snn_state.h5', close=True):
        """Save membrane potentials and counters of every slot to an HDF5 file.

        Parameters:
        -----------
        filename : str, optional
            Name of the HDF5 file. Default is "snn_state.h5".
        close : bool, optional (default=True)
            If False, the open `h5py.File` is returned and must be closed by the caller.
        """
        state = h5py.File(filename, 'w')
        state.attrs['n'] = self.n
        for k, (i, s) in enumerate(zip(self.slots, self.states)):
            grp = state.create_group(f'slot{k}')
            grp.attrs['layer'] = i
            grp.create_dataset('v', data=s.v)
            grp.create_dataset('v0', data=s.v0)
            grp.create_dataset('theta', data=s.theta)
            grp.create_dataset('spike_count', data=s.spike_count)
            grp.create_dataset('current_sum', data=s.current_sum)

        if close:
            state.close()
        else:
            return state

    def load_state(self, filename='snn_state.h5'):
        """Restore the slot states saved by `save_state` so the run can continue."""
        with h5py.File(filename, 'r') as state:
            if len(state.keys()) != len(self.slots):
                raise ShapeMismatchError(f'{filename} holds {len(state.keys())} slots, '
                                         f'graph has {len(self.slots)}')
            self.states = []
            for k, i in enumerate(self.slots):
                grp = state[f'slot{k}']
                if int(grp.attrs['layer']) != i:
                    raise ShapeMismatchError(f'{filename}: slot {k} was saved for layer '
                                             f'{int(grp.attrs["layer"])}, not {i}')
                self.states.append(IFLayerState(v=grp['v'][:], theta=grp['theta'][:],
                                                spike_count=grp['spike_count'][:],
                                                current_sum=grp['current_sum'][:],
                                                v0=grp['v0'][:]))
            self.n = int(state.attrs['n'])
        self._steps = []
        self.record_trace = False

    def read_state(self, filename='snn_state.h5'):
        """Open an HDF5 state file for reading; the caller must close it."""
        return h5py.File(filename, 'r')


def simulate(graph, batch, config):
    '''Simulate `graph` on `batch` with a SimConfig, returns (output, SpikeTrace)'''
    return SolverIF(graph).simulate(batch, config.T, t0=config.t0,
                                    record_trace=config.record_trace)


def estimate_t0(graph, data, eps=T0_EPS, init_fraction=0.5, return_terms=False):
    '''
    Expected arrival time of the first output spikes

        t0 ~ sum_l (theta_l - v_l(0)) / max_i mean_data ReLU(z_l)_i

    with z_l the analog pre-activations of slot l. Per-channel thresholds
    are reduced by their maximum; a denominator below `eps` is floored at
    `eps` and the slot is flagged as dead.

    Parameters:
    -----------
    graph: NetworkGraph
        Graph with finalized thresholds
    data: iterable of batches
    eps: float, default 1e-6
    init_fraction: float, default 0.5
        Initial membrane potential as a fraction of the threshold
    return_terms: bool, default False
        Also return one dict per slot (layer, theta, rate, term, dead)

    Returns:
    --------
    float, or (float, list of dict)
    '''
    _check_thetas(graph)
    sums, count = None, 0
    for batch in data:
        x = as_array(batch)
        if x.shape[0] == 0:
            continue
        res = graph.forward_ann(x, mode='relu')
        pre = [np.maximum(z, 0).astype(np.float64).sum(axis=0) for z in res.pre]
        sums = pre if sums is None else [a + b for a, b in zip(sums, pre)]
        count += x.shape[0]
    if count == 0:
        raise EmptyDataError('delay estimation needs at least one sample')

    logger = get_logger()
    terms, total = [], 0.
    for i, s in zip(graph.slots, sums):
        theta = float(np.max(graph.layers[i].theta))
        if graph.layers[i].theta.size > 1:
            logger.info(f'layer {i}: channel-wise thresholds reduced by max to {theta:.6g}')
        rate = float(np.max(s / count))
        dead = rate <= eps
        if dead:
            logger.warning(f'layer {i}: no positive mean activation, delay term capped with eps={eps:g}')
        term = (theta - init_fraction*theta) / max(rate, eps)
        terms.append({'layer': i, 'theta': theta, 'rate': rate, 'term': term, 'dead': dead})
        total += term

    if return_terms:
        return total, terms
    return total


def choose_delay(t0_estimate, T, window=DELAY_WINDOW):
    '''
    Start of the output average for a run of T timesteps

    The estimate is used when at least `window` steps remain after it,
    otherwise the last `window` steps are averaged. Runs shorter than
    window+1 steps fall back to max(0, T-window) with a warning.
    '''
    T = int(T)
    if T < 1:
        raise ConfigError(f'T must be >= 1, got {T}')
    if T < window + 1:
        get_logger().warning(f'T={T} is shorter than the delay window {window}+1, '
                             f'averaging from t0={max(0, T - window)}')
        return max(0, T - window)
    if T >= t0_estimate + window:
        t0 = math.floor(t0_estimate)
    else:
        t0 = T - window
    return int(min(max(t0, 0), T - 1))
