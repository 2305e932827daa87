import sys
import numpy as np
import pytest

sys.path.append('../snnconv')

from snnconv.layers import Dense, Activation
from snnconv.networkGraph import NetworkGraph, fold_batchnorm
from snnconv.solverIF import (SolverIF, SimConfig, IFLayerState, step, simulate,
                              init_membrane, estimate_t0, choose_delay)
from snnconv.errors import ConfigError, GraphError, ThresholdError, ShapeMismatchError, \
    EmptyDataError, InvariantError


def neuron(theta=1.):
    '''One IF neuron fed straight from the input'''
    return NetworkGraph([Dense([[1.]]), Activation([theta])], (1,), activation_mode='if')


class TestStep:

    @pytest.mark.parametrize('current, spike, v', [(0.7, 1., 0.2), (0.3, 0., 0.8), (0.5, 1., 0.)])
    def test_reset_by_subtraction(self, current, spike, v):
        state = IFLayerState(v=np.array([0.5]), theta=[1.])
        s = step(state, np.array([current]))
        assert s[0] == spike
        assert state.v[0] == pytest.approx(v)

    def test_shape_mismatch(self):
        state = IFLayerState(v=np.zeros((1, 3)), theta=[1.])
        with pytest.raises(ShapeMismatchError):
            step(state, np.zeros((1, 2)))

    def test_rate_coding_convergence(self):
        z = np.random.default_rng(0).uniform(-0.5, 1.5, size=1000)
        for T in (16, 64, 256):
            state = IFLayerState(v=np.full(z.shape, 0.5), theta=[1.])
            for _ in range(T):
                step(state, z)
            r = state.spike_count / T
            assert np.all(np.abs(r - np.clip(z, 0, 1)) <= 1/T + 1e-12)
            assert np.all(state.spike_count <= T)


class TestSimulation:

    def test_single_neuron(self):
        out, trace = simulate(neuron(), np.array([[0.3]]), SimConfig(T=10))
        assert out[0, 0] == pytest.approx(0.3)
        assert trace.total_spikes == 3

    def test_saturation_and_silence(self):
        out, _ = SolverIF(neuron()).simulate(np.array([[1.2], [-0.4]]), 8)
        assert out[0, 0] == pytest.approx(1.)
        assert out[1, 0] == 0.

    def test_delayed_average(self):
        solver = SolverIF(neuron())
        x = np.array([[0.3]])
        solver.reset(1)
        outs = [solver.one_step(x)[0, 0] for _ in range(10)]
        out, _ = solver.simulate(x, 10, t0=4)
        assert out[0, 0] == pytest.approx(np.mean(outs[4:]))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SimConfig(T=0).validate()
        with pytest.raises(ConfigError):
            SimConfig(T=5, t0=5).validate()

    def test_init_membrane(self):
        g = NetworkGraph([Dense(np.eye(2)), Activation([2., 4.])], (2,), activation_mode='if')
        states = init_membrane(g, batch_size=3)
        assert states[0].v.shape == (3, 2)
        assert np.allclose(states[0].v, [1., 2.])

    def test_reinit_after_run(self):
        solver = SolverIF(neuron())
        solver.simulate(np.array([[0.9]]), 7)
        solver.reset(1)
        assert solver.states[0].v[0, 0] == 0.5
        assert solver.states[0].spike_count.sum() == 0

    def test_needs_thresholds(self, mlp):
        with pytest.raises(ThresholdError):
            SolverIF(mlp)

    def test_rejects_unprepared_layers(self, convnet):
        g = fold_batchnorm(convnet)
        for i in g.slots:
            g.layers[i].theta = np.ones(1)
        with pytest.raises(GraphError):
            SolverIF(g.as_mode('clip'))

    def test_invariant_check(self, mlp_balanced, mlp_data):
        solver = SolverIF(mlp_balanced)
        solver.simulate(mlp_data[0][:4], 8)
        solver.check_invariants()
        solver.states[0].spike_count[0, 0] = solver.n + 1
        with pytest.raises(InvariantError, match='layer 1'):
            solver.check_invariants()
        solver.states[0].spike_count[0, 0] = 0
        solver.states[1].v[0, 0] = np.nan
        with pytest.raises(InvariantError):
            solver.check_invariants()

    def test_conservation(self, conv_balanced, conv_data):
        solver = SolverIF(conv_balanced)
        solver.simulate(conv_data[0][:20], 64)
        for state in solver.states:
            ledger = state.current_sum - state.spike_count*state.theta_view - (state.v - state.v0)
            assert np.max(np.abs(ledger)) <= 1e-4

    def test_deterministic(self, conv_balanced, conv_data):
        x = conv_data[0][:10]
        a, ta = SolverIF(conv_balanced).simulate(x, 32, record_trace=True)
        b, tb = SolverIF(conv_balanced).simulate(x, 32, record_trace=True)
        assert np.array_equal(a, b)
        assert np.array_equal(ta.step_counts, tb.step_counts)

    def test_absorbed_graph_spikes_identically(self, mlp_balanced, mlp_data):
        from snnconv.thresholdBalancer import absorb_thresholds
        x = mlp_data[0][:20]
        _, ta = SolverIF(mlp_balanced).simulate(x, 64)
        _, tb = SolverIF(absorb_thresholds(mlp_balanced)).simulate(x, 64)
        # the rescaled weights are rounded back to float32, so a membrane that
        # lands within rounding of its threshold may fire one step apart
        agree = np.mean([np.mean(a == b) for a, b in zip(ta.counts, tb.counts)])
        assert agree >= 0.99

    def test_windows_match_simulate(self, mlp_balanced, mlp_data):
        x = mlp_data[0][:10]
        solver = SolverIF(mlp_balanced)
        outputs, traces = solver.run_windows(x, [(16, 0), (16, 8), (32, 10)], snapshots=[16])
        for T, t0 in [(16, 0), (16, 8), (32, 10)]:
            ref, _ = solver.simulate(x, T, t0=t0)
            assert np.array_equal(outputs[(T, t0)], ref)
        _, tr = solver.simulate(x, 16)
        assert traces[16].totals == tr.totals


class TestTrace:

    def test_step_counts(self, mlp_balanced, mlp_data, tmp_path):
        _, trace = SolverIF(mlp_balanced).simulate(mlp_data[0][:5], 20, record_trace=True)
        assert trace.step_counts.shape == (20, 2)
        assert list(trace.step_counts.sum(axis=0)) == trace.totals
        assert trace.frames == 5
        assert all(c.max() <= 20*5 for c in trace.counts)
        trace.to_csv(tmp_path / 'trace.csv', bucket=5)
        rows = np.loadtxt(tmp_path / 'trace.csv', delimiter=',', skiprows=1)
        assert rows.shape == (8, 3)
        assert rows[:, 2].sum() == trace.total_spikes

    def test_merge(self, mlp_balanced, mlp_data):
        solver = SolverIF(mlp_balanced)
        x = mlp_data[0][:8]
        _, whole = solver.simulate(x, 16)
        _, a = solver.simulate(x[:3], 16)
        _, b = solver.simulate(x[3:], 16)
        merged = a.merge(b)
        assert merged.frames == 8
        assert merged.totals == whole.totals


class TestStateFile:

    def test_resume(self, mlp_balanced, mlp_data, tmp_path):
        x = mlp_data[0][:4]
        ref = SolverIF(mlp_balanced)
        ref.reset(4)
        for _ in range(12):
            out_ref = ref.one_step(x)

        first = SolverIF(mlp_balanced)
        first.reset(4)
        for _ in range(5):
            first.one_step(x)
        first.save_state(tmp_path / 'state.h5')

        second = SolverIF(mlp_balanced)
        second.load_state(tmp_path / 'state.h5')
        assert second.n == 5
        for _ in range(7):
            out = second.one_step(x)
        assert np.array_equal(out, out_ref)
        assert np.array_equal(second.states[1].spike_count, ref.states[1].spike_count)

        with second.read_state(tmp_path / 'state.h5') as f:
            assert f['slot0'].attrs['layer'] == 1


class TestDelay:

    def test_estimate(self):
        g = NetworkGraph([Dense([[0.25]]), Activation([1.]), Dense([[1.]]), Activation([1.])],
                         (1,), activation_mode='if')
        t0, terms = estimate_t0(g, [np.ones((4, 1))], return_terms=True)
        assert terms[0]['term'] == pytest.approx(2.)
        assert terms[1]['term'] == pytest.approx(2.)
        assert t0 == pytest.approx(4.)

    def test_dead_layer(self):
        g = NetworkGraph([Dense([[-1.]]), Activation([1.])], (1,), activation_mode='if')
        t0, terms = estimate_t0(g, [np.ones((2, 1))], eps=1e-3, return_terms=True)
        assert terms[0]['dead']
        assert t0 == pytest.approx(0.5/1e-3)

    def test_empty_data(self):
        with pytest.raises(EmptyDataError):
            estimate_t0(neuron(), [])

    @pytest.mark.parametrize('t0_est, T, t0', [(10, 8, 4), (10, 64, 10), (0, 32, 0),
                                              (2.7, 10, 2), (3, 3, 0), (3, 1, 0)])
    def test_choose_delay(self, t0_est, T, t0):
        assert choose_delay(t0_est, T) == t0
