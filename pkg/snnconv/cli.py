# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

'''
Command line interface

    snnconv convert   --manifest m.json --weights m.snnf --data calib.snnd --out conv/
    snnconv evaluate  --manifest conv/model.json --weights conv/model.snnf \\
                      --data test.snnd --labels test.snnl --timesteps 32,64,128
    snnconv diagnose  ... --timesteps 128 [--norm operator]
    snnconv estimate-delay ... [--write]
    snnconv energy    ... --timesteps 32,64 [--labels test.snnl] [--trace]

Exit codes: 0 success, 2 usage error, 3 data/model error,
4 internal invariant violation.
'''

import os
import sys
import argparse
from contextlib import contextmanager

import numpy as np

from .networkGraph import fold_batchnorm, rewrite_preneuron_maxpool
from .thresholdBalancer import (BalanceConfig, clipify, balance, robust_norm,
                                absorb_thresholds)
from .solverIF import SolverIF, estimate_t0, choose_delay
from .routines import ann_accuracy
from .modelIO import load_model, save_model, load_batches
from .diagnostics import (error_bound, count_sops, comparator_ops, count_flops,
                          energy_report, sops_at_accuracy, write_csv, format_table,
                          EnergyReport)
from .logger import get_logger
from .errors import SnnConvError, ConfigError, EmptyDataError
from .constants import (ITERATIONS, ETA, ROBUST_PERCENTILE, DELAY_WINDOW,
                        GRANULARITIES, NORM_VARIANTS)
from ._version import __version__


@contextmanager
def stage(name):
    '''Tag any toolkit error raised inside the block with the pipeline stage'''
    try:
        yield
    except SnnConvError as err:
        if not hasattr(err, 'stage'):
            err.stage = name
        raise


def _int_list(txt):
    try:
        values = [int(v) for v in txt.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected a comma separated list of integers, got "{txt}"')
    if not values:
        raise argparse.ArgumentTypeError('empty list')
    return values


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _check_timesteps(timesteps, delay, window):
    for T in timesteps:
        if T < 1:
            raise ConfigError(f'T must be >= 1, got {T}')
        if delay is None and T < window + 1:
            raise ConfigError(f'T={T} is too short for delayed evaluation, T >= {window + 1} '
                              'is required (or pass --delay)')
        if delay is not None and not 0 <= delay < T:
            raise ConfigError(f'--delay {delay} must be in [0, T-1] for T={T}')


def _load(args):
    with stage('load'):
        return load_model(args.manifest, args.weights)


def _batches(args, labels=None):
    return load_batches(args.data, args.batch_size, labels_path=labels)


# ---------- subcommands ---------- #

def cmd_convert(args):
    '''fold BatchNorm, move max pooling pre-neuron, calibrate thresholds, estimate the delay'''
    cfg = BalanceConfig(eta=args.eta, iterations=args.iters, granularity=args.granularity,
                        batch_size=args.batch_size, seed=args.seed,
                        normalize_by_count=not args.no_normalize_delta).validate()
    if args.method == 'robust-norm' and not 0 < args.percentile <= 100:
        raise ConfigError(f'--percentile must be in (0, 100], got {args.percentile}')

    graph = _load(args)
    with stage('load'):
        data = list(_batches(args))
    out = _outdir(args.out)

    with stage('fold_batchnorm'):
        graph = fold_batchnorm(graph)
    with stage('rewrite_preneuron_maxpool'):
        graph = rewrite_preneuron_maxpool(graph)

    state = None
    if args.method == 'ltb':
        with stage('clipify'):
            graph = clipify(graph, granularity=cfg.granularity)
        with stage('balance'):
            graph, state = balance(graph, data, config=cfg, verbose=args.verbose)
    else:
        with stage('robust_norm'):
            graph = robust_norm(graph, data, percentile=args.percentile,
                                granularity=cfg.granularity)

    if args.absorb:
        with stage('absorb_thresholds'):
            graph = absorb_thresholds(graph, theta_floor=cfg.theta_floor)

    with stage('estimate_t0'):
        graph.t0_estimate = estimate_t0(graph, data)
    graph.norm_variant = args.norm

    with stage('save'):
        save_model(graph, os.path.join(out, 'model.json'), os.path.join(out, 'model.snnf'))
        if state is not None:
            state.to_csv(os.path.join(out, 'convergence.csv'))

    rows = [(i, theta.size, float(theta.mean()), float(theta.max()))
            for i, theta in zip(graph.slots, graph.thetas)]
    print(format_table(('layer', 'thresholds', 'theta_mean', 'theta_max'), rows,
                       ('%d', '%d', '%.6g', '%.6g')))
    print(f'estimated delay t0 = {graph.t0_estimate:.4f}')
    return 0


def cmd_evaluate(args):
    '''accuracy of the converted network for each T, with the analog accuracy as reference'''
    _check_timesteps(args.timesteps, args.delay, args.delay_window)
    graph = _load(args)
    out = _outdir(args.out)

    with stage('evaluate'):
        ann = ann_accuracy(graph, _batches(args, args.labels), mode='relu')
        solver = SolverIF(graph, verbose=args.verbose)
        results = solver.evaluate(_batches(args, args.labels), args.timesteps,
                                  delay=args.delay, window=args.delay_window)

    header = ('mode', 'T', 't0', 'accuracy', 'samples')
    fmt = ('%s', '%d', '%d', '%.6f', '%d')
    rows = [(r.mode, r.T, r.t0, r.accuracy, r.samples) for r in [ann] + results]
    with stage('save'):
        write_csv(os.path.join(out, 'eval.csv'), header, rows, fmt)
    print(format_table(header, rows, fmt))

    if args.sweep_delay:
        T = args.timesteps[0]
        with stage('sweep_delay'):
            sweep = solver.sweep_delay(_batches(args, args.labels), T, range(T))
        rows = [(r.T, r.t0, r.accuracy, r.samples) for r in sweep]
        with stage('save'):
            write_csv(os.path.join(out, 'sweep_delay.csv'), header[1:], rows, fmt[1:])
        print(format_table(header[1:], rows, fmt[1:]))
    return 0


def cmd_diagnose(args):
    '''per-layer conversion errors and the propagated bound on the first batch'''
    T = args.timesteps[0]
    if T < 1:
        raise ConfigError(f'T must be >= 1, got {T}')
    graph = _load(args)
    out = _outdir(args.out)
    norm = args.norm or graph.norm_variant or 'reshaped'

    with stage('load'):
        batch = next(iter(_batches(args)), None)
    if batch is None or len(batch) == 0:
        raise EmptyDataError(f'{args.data} holds no samples')

    with stage('diagnose'):
        report = error_bound(graph, batch, T, norm=norm)
    if report.e_model > report.bound*(1 + 1e-6) + 1e-12:
        get_logger().warning(f'measured output error {report.e_model:.6g} exceeds the '
                             f'{norm} bound {report.bound:.6g}')
    with stage('save'):
        report.to_csv(os.path.join(out, 'diagnose.csv'))
    print(report.table())
    return 0


def cmd_estimate_delay(args):
    '''recompute the delay estimate of a converted model, optionally storing it'''
    graph = _load(args)
    with stage('estimate_t0'):
        t0, terms = estimate_t0(graph, _batches(args), return_terms=True)

    rows = [(t['layer'], t['theta'], t['rate'], t['term'], int(t['dead'])) for t in terms]
    print(format_table(('layer', 'theta', 'rate', 'term', 'dead'), rows,
                       ('%d', '%.6g', '%.6g', '%.6g', '%d')))
    print(f'estimated delay t0 = {t0:.4f}')

    if args.write:
        graph.t0_estimate = t0
        with stage('save'):
            save_model(graph, args.manifest, args.weights)
    return 0


def cmd_energy(args):
    '''synaptic operations and energy of the converted network against the analog one'''
    labelled = args.labels is not None
    _check_timesteps(args.timesteps, args.delay if labelled else 0, args.delay_window)
    graph = _load(args)
    out = _outdir(args.out)

    t0_est = graph.t0_estimate or 0.
    windows = []
    for T in args.timesteps:
        if not labelled:
            t0 = 0
        elif args.delay is not None:
            t0 = args.delay
        else:
            t0 = choose_delay(t0_est, T, window=args.delay_window)
        windows.append((T, t0))

    with stage('energy'):
        solver = SolverIF(graph, verbose=args.verbose)
        traces = {T: None for T in args.timesteps}
        correct = {T: 0 for T in args.timesteps}
        for batch in _batches(args, args.labels):
            if len(batch) == 0:
                continue
            outputs, snaps = solver.run_windows(batch.data, windows, snapshots=args.timesteps)
            for T, t0 in windows:
                traces[T] = snaps[T] if traces[T] is None else traces[T].merge(snaps[T])
                if labelled:
                    pred = np.argmax(graph.readout(outputs[(T, t0)]), axis=1)
                    correct[T] += int(np.sum(pred == batch.labels))
        if traces[args.timesteps[0]] is None:
            raise EmptyDataError(f'{args.data} holds no samples')

        flops = count_flops(solver.graph)
        reports, acc_rows = [], []
        for T, t0 in windows:
            trace = traces[T]
            rep = energy_report(count_sops(trace, solver.graph), flops*trace.frames, trace.frames,
                                comparator_ops=comparator_ops(trace, solver.graph), T=T)
            reports.append(rep)
            if labelled:
                acc_rows.append((T, correct[T]/trace.frames, rep.sops/trace.frames))

    with stage('save'):
        write_csv(os.path.join(out, 'energy.csv'), EnergyReport.header,
                  [r.row() for r in reports], EnergyReport.fmt)
    print(format_table(EnergyReport.header, [r.row() for r in reports], EnergyReport.fmt))

    if labelled:
        with stage('energy'):
            ann = ann_accuracy(graph, _batches(args, args.labels), mode='relu')
        levels = sops_at_accuracy(acc_rows, ann.accuracy)
        header = ('fraction', 'T', 'sops_per_frame', 'frames_per_joule')
        fmt = ('%.2f', '%s', '%s', '%s')
        rows = [(l['fraction'], l['T'], l['sops_per_frame'], l['frames_per_joule']) for l in levels]
        with stage('save'):
            write_csv(os.path.join(out, 'energy_accuracy.csv'), header, rows, fmt)
        print(format_table(header, rows, fmt))
        print(f'analog accuracy {100*ann.accuracy:.2f}%, '
              f'analog frames per joule {reports[0].ann_frames_per_joule:.6g}')

    if args.trace:
        T = max(args.timesteps)
        with stage('trace'):
            trace = None
            for batch in _batches(args):
                _, tr = solver.simulate(batch.data, T, record_trace=True)
                trace = tr if trace is None else trace.merge(tr)
            trace.to_csv(os.path.join(out, 'trace.csv'), bucket=args.trace_bucket)
    return 0


# ---------- parser ---------- #

def _model_args(p):
    p.add_argument('--manifest', required=True, help='model manifest (.json)')
    p.add_argument('--weights', required=True, help='weight blob (.snnf)')
    p.add_argument('--data', required=True, help='dataset file (.snnd)')
    p.add_argument('--batch-size', type=int, default=64, help='samples per batch (default: 64)')
    p.add_argument('--out', default='.', help='output directory for CSV reports (default: .)')


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='store_true', help='show progress messages')
    common.add_argument('--logfile', nargs='?', const=True, default=None,
                        help='append messages to a logfile (default name: snnconv.log)')

    parser = argparse.ArgumentParser(prog='snnconv', description='ANN to SNN conversion toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('convert', parents=[common], help='convert a ReLU network')
    _model_args(p)
    p.add_argument('--method', choices=('ltb', 'robust-norm'), default='ltb',
                   help='threshold calibration (default: ltb, local threshold balancing)')
    p.add_argument('--iters', type=int, default=ITERATIONS,
                   help=f'balancing iterations K (default: {ITERATIONS})')
    p.add_argument('--eta', type=float, default=ETA, help=f'learning rate (default: {ETA})')
    p.add_argument('--granularity', choices=GRANULARITIES, default='layer')
    p.add_argument('--no-normalize-delta', action='store_true',
                   help='use the summed update instead of the per-element mean')
    p.add_argument('--percentile', type=float, default=ROBUST_PERCENTILE,
                   help=f'percentile of robust-norm (default: {ROBUST_PERCENTILE})')
    p.add_argument('--absorb', action='store_true', help='fold thresholds into the weights')
    p.add_argument('--norm', choices=NORM_VARIANTS, default='reshaped',
                   help='conv norm recorded for error reports (default: reshaped)')
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser('evaluate', parents=[common], help='accuracy per number of timesteps')
    _model_args(p)
    p.add_argument('--labels', required=True, help='labels file (.snnl)')
    p.add_argument('--timesteps', type=_int_list, required=True, help='comma separated T values')
    p.add_argument('--delay', type=int, default=None, help='fixed t0 for every T')
    p.add_argument('--delay-window', type=int, default=DELAY_WINDOW)
    p.add_argument('--sweep-delay', action='store_true',
                   help='also report accuracy for every t0 < T at the first T')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('diagnose', parents=[common], help='conversion error and its bound')
    _model_args(p)
    p.add_argument('--timesteps', type=_int_list, default=[128], help='T of the run (default: 128)')
    p.add_argument('--norm', choices=NORM_VARIANTS, default=None,
                   help='conv norm of the bound (default: as recorded in the model)')
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser('estimate-delay', parents=[common], help='estimate the output delay t0')
    _model_args(p)
    p.add_argument('--write', action='store_true', help='store the estimate in the manifest')
    p.set_defaults(func=cmd_estimate_delay)

    p = sub.add_parser('energy', parents=[common], help='synaptic operations and energy')
    _model_args(p)
    p.add_argument('--labels', default=None, help='labels file, enables accuracy levels')
    p.add_argument('--timesteps', type=_int_list, required=True, help='comma separated T values')
    p.add_argument('--delay', type=int, default=None)
    p.add_argument('--delay-window', type=int, default=DELAY_WINDOW)
    p.add_argument('--trace', action='store_true', help='write per-timestep spike counts')
    p.add_argument('--trace-bucket', type=int, default=1)
    p.set_defaults(func=cmd_energy)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else 2

    logger = get_logger(verbose=args.verbose, logfile=args.logfile)
    try:
        return args.func(args)
    except SnnConvError as err:
        where = getattr(err, 'stage', None)
        prefix = f'{args.command} failed at {where}' if where else f'{args.command} failed'
        logger.error(f'{prefix}: {err}')
        return err.exit_code


if __name__ == '__main__':
    sys.exit(main())
