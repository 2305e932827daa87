import sys
import numpy as np
import pytest

sys.path.append('../snnconv')

from snnconv.solverIF import SolverIF, estimate_t0
from snnconv.routines import ann_accuracy
from snnconv.networkGraph import fold_batchnorm, rewrite_preneuron_maxpool
from snnconv.thresholdBalancer import absorb_thresholds, robust_norm

from conftest import batches, prepare


@pytest.mark.slow
class TestConversionAccuracy:
    TIMESTEPS = [32, 64, 128, 256, 512]
    NOISE = 0.005

    @pytest.fixture(scope='class')
    def converted(self, convnet, conv_data):
        x, labels = conv_data
        g = prepare(convnet, x, iterations=1000)
        g.t0_estimate = estimate_t0(g, batches(x))
        return g

    def test_accuracy_per_timestep(self, converted, conv_data):
        x, labels = conv_data
        data = batches(x, labels)
        ann = ann_accuracy(converted, data)
        results = SolverIF(converted).evaluate(data, self.TIMESTEPS)

        acc = [r.accuracy for r in results]
        assert ann.accuracy == 1.
        assert acc[-1] >= ann.accuracy - 0.01
        assert all(b >= a - self.NOISE for a, b in zip(acc[:-1], acc[1:]))

    def test_absorbed_model_matches(self, converted, conv_data):
        x, labels = conv_data
        absorbed = absorb_thresholds(converted)
        ref = converted.forward_ann(x, mode='clip').output
        out = absorbed.readout(absorbed.forward_ann(x, mode='clip').output)
        np.testing.assert_allclose(out, ref, rtol=1e-5, atol=1e-5)
        top = np.sort(ref, axis=1)
        clear = top[:, -1] - top[:, -2] > 1e-4
        assert clear.mean() > 0.95
        assert np.array_equal(absorbed.predict(x, mode='clip')[clear],
                              converted.predict(x, mode='clip')[clear])

    def test_delayed_evaluation(self, convnet, conv_data):
        x, labels = conv_data
        data = batches(x, labels)
        delayed, direct = [], []
        for seed in range(3):
            g = prepare(convnet, x, iterations=300, seed=seed)
            t0 = estimate_t0(g, batches(x))
            solver = SolverIF(g)
            delayed.append(solver.evaluate(data, [32], t0_estimate=t0)[0].accuracy)
            direct.append(solver.evaluate(data, [32], delay=0)[0].accuracy)
        assert np.mean(delayed) >= np.mean(direct) - self.NOISE

    def test_channelwise_thresholds(self, convnet, conv_data):
        x, labels = conv_data
        data = batches(x, labels)
        layer = SolverIF(prepare(convnet, x, granularity='layer'))
        channel = SolverIF(prepare(convnet, x, granularity='channel'))
        for T in (32, 64, 128):
            a = layer.evaluate(data, [T], delay=0)[0].accuracy
            b = channel.evaluate(data, [T], delay=0)[0].accuracy
            assert b >= a - self.NOISE

    def test_balancing_against_robust_norm(self, converted, convnet, conv_data):
        x, labels = conv_data
        data = batches(x, labels)
        g = rewrite_preneuron_maxpool(fold_batchnorm(convnet))
        percentile = SolverIF(robust_norm(g, batches(x, batch_size=32)))
        balanced = SolverIF(converted)
        rn = [percentile.evaluate(data, [T], delay=0)[0].accuracy for T in (32, 64, 128)]
        ltb = [balanced.evaluate(data, [T], delay=0)[0].accuracy for T in (32, 64, 128)]
        assert np.mean(ltb) >= np.mean(rn) - self.NOISE
