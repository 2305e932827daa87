# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from .modelIO import DatasetBatch
from .errors import ConfigError, EmptyDataError, ShapeMismatchError
from .constants import DELAY_WINDOW


@dataclass
class EvalResult:
    '''Top-1 accuracy of one evaluation row; T = 0 marks the analog reference'''
    T: int
    t0: int
    accuracy: float
    samples: int
    mode: str = 'snn'


def _labelled(data):
    for batch in data:
        if not isinstance(batch, DatasetBatch) or batch.labels is None:
            raise ConfigError('accuracy evaluation needs labelled batches')
        if len(batch):
            yield batch


def ann_accuracy(graph, data, mode='relu'):
    '''Top-1 accuracy of the analog network over labelled batches'''
    correct, total = 0, 0
    for batch in _labelled(data):
        pred = graph.predict(batch.data, mode=mode)
        correct += int(np.sum(pred == batch.labels))
        total += len(batch)
    if total == 0:
        raise EmptyDataError('no labelled samples to evaluate')
    return EvalResult(T=0, t0=0, accuracy=correct/total, samples=total, mode=mode)


class RoutinesMixin():

    def run_windows(self, batch, windows, snapshots=()):
        '''
        One simulation of a batch serving several output windows

        Parameters:
        -----------
        batch: ndarray
        windows: list of (T, t0)
            The output of each window is averaged over steps t0+1 .. T,
            exactly as `simulate(batch, T, t0)` would return it.
        snapshots: iterable of int
            Timesteps at which a SpikeTrace is taken

        Returns:
        --------
        (dict (T, t0) -> output, dict T -> SpikeTrace)
        '''
        windows = [(int(T), int(t0)) for T, t0 in windows]
        for T, t0 in windows:
            if T < 1 or not 0 <= t0 < T:
                raise ConfigError(f'invalid output window T={T}, t0={t0}')
        snapshots = set(int(t) for t in snapshots)
        horizon = max([T for T, _ in windows] + list(snapshots))

        x = np.asarray(batch, dtype=np.float64)
        if tuple(x.shape[1:]) != self.graph.input_shape:
            raise ShapeMismatchError(f'batch of shape {x.shape} for input {self.graph.input_shape}',
                                     layer_index=0)
        self.record_trace = False
        self.reset(x.shape[0])
        acc, traces = {}, {}
        for t in tqdm(range(1, horizon + 1), disable=not self.verbose):
            out = self.one_step(x)
            for T, t0 in windows:
                if t0 < t <= T:
                    acc[(T, t0)] = out.copy() if (T, t0) not in acc else acc[(T, t0)] + out
            if t in snapshots:
                traces[t] = self.trace()

        self.check_invariants()
        outputs = {(T, t0): acc[(T, t0)] / (T - t0) for T, t0 in windows}
        return outputs, traces

    def evaluate(self, data, timesteps, delay=None, window=DELAY_WINDOW, t0_estimate=None):
        '''
        Top-1 accuracy of the spiking network for several run lengths

        Parameters:
        -----------
        data: iterable of labelled DatasetBatch
        timesteps: list of int
            Run lengths T to evaluate
        delay: int, optional
            Fixed t0 for every T. By default t0 = choose_delay(t0_estimate, T).
        window: int, default 4
            Delay window of `choose_delay`
        t0_estimate: float, optional
            Defaults to the estimate stored in the graph, or 0

        Returns:
        --------
        list of EvalResult, one per T
        '''
        from .solverIF import choose_delay

        timesteps = [int(T) for T in timesteps]
        if not timesteps:
            raise ConfigError('no timesteps to evaluate')
        if t0_estimate is None:
            t0_estimate = self.graph.t0_estimate or 0.
        if delay is None:
            windows = [(T, choose_delay(t0_estimate, T, window=window)) for T in timesteps]
        else:
            windows = [(T, int(delay)) for T in timesteps]

        results = self.evaluate_windows(data, windows)
        for r in results:
            self.log(f'T={r.T:5d} t0={r.t0:4d} accuracy={100*r.accuracy:.2f}%')
        return results

    def sweep_delay(self, data, T, delays):
        '''
        Accuracy at a fixed run length T for each candidate delay t0 < T,
        all from one simulation per batch

        Returns:
        --------
        list of EvalResult, one per delay
        '''
        return self.evaluate_windows(data, [(int(T), int(d)) for d in delays])

    def evaluate_windows(self, data, windows):
        '''Accuracy for each (T, t0) output window over labelled batches'''
        correct = {w: 0 for w in windows}
        total = 0
        for batch in _labelled(data):
            outputs, _ = self.run_windows(batch.data, windows)
            for w, out in outputs.items():
                pred = np.argmax(self.graph.readout(out), axis=1)
                correct[w] += int(np.sum(pred == batch.labels))
            total += len(batch)
        if total == 0:
            raise EmptyDataError('no labelled samples to evaluate')
        return [EvalResult(T=T, t0=t0, accuracy=correct[(T, t0)]/total, samples=total)
                for T, t0 in windows]
