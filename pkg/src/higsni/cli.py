"""Command-line front end.

Exit codes: 0 success (for ``check-ni``: NI), 1 not NI, 2 NI unknown,
10 unreadable or malformed file, 11 dimension mismatch, 12 invalid
configuration, 13 filesystem error, 14 numerical precondition failure,
15 simulation guard.
"""

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import errors
from .analysis import describing_sweep, step_metrics, write_sweep_csv
from .closedloop import (InputSignal, assemble, simulate,
                         write_trajectory_csv)
from .higs import HigsParams, controller_to_dict
from .io import (bundled_path, dumps_document, load_json, load_plant,
                 load_scenario, save_controller, save_plant)
from .plant import certify
from .synthesis import SynthesisRequest, synthesize

EXIT_NI, EXIT_NOT_NI, EXIT_UNKNOWN = 0, 1, 2
EXIT_FILE, EXIT_DIM, EXIT_CONFIG, EXIT_FS, EXIT_NUMERIC, EXIT_GUARD = \
    10, 11, 12, 13, 14, 15


class _Fail(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _classify(exc):
    """Map an exception to an exit code."""
    if isinstance(exc, _Fail):
        return exc.code
    if isinstance(exc, errors.DimensionMismatch):
        return EXIT_DIM
    if isinstance(exc, errors.SimulationError):
        return EXIT_GUARD
    if isinstance(exc, (errors.PreconditionQ0, errors.SingularMatrix,
                        errors.Infeasible, errors.PreconditionDefiniteness,
                        errors.ConvergenceFailure, errors.AsymmetricInput,
                        errors.SingularAtFrequency)):
        return EXIT_NUMERIC
    if isinstance(exc, (FileNotFoundError, IsADirectoryError,
                        json.JSONDecodeError, UnicodeDecodeError)):
        return EXIT_FILE
    if isinstance(exc, (errors.ValidationError, ValueError, TypeError,
                        KeyError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_FS
    return None


def _read_plant(path):
    try:
        return load_plant(path)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_FILE, f"cannot read model {path}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, errors.DimensionMismatch):
            raise
        raise _Fail(EXIT_FILE, f"malformed model {path}: {exc}") from exc


def _print_json(obj):
    sys.stdout.write(json.dumps(obj, indent=2) + '\n')


# ---------------------------------------------------------------- commands

def cmd_check_ni(args):
    plant = _read_plant(args.model)
    grid = None
    if args.wmin is not None or args.wmax is not None:
        if args.wmin is None or args.wmax is None or \
                not 0 < args.wmin < args.wmax:
            raise _Fail(EXIT_CONFIG, "need 0 < --wmin < --wmax")
        grid = np.logspace(math.log10(args.wmin), math.log10(args.wmax),
                           args.points)
    verdict = certify(plant, args.method, grid)
    _print_json(verdict.to_dict())
    return {True: EXIT_NI, False: EXIT_NOT_NI, None: EXIT_UNKNOWN}[
        verdict.is_ni]


def cmd_synthesize(args):
    plant = _read_plant(args.model)
    req = SynthesisRequest(plant, args.topology, args.margin, args.omega_h,
                           args.cap)
    res = synthesize(req)
    doc = controller_to_dict(res.controller)
    if args.out:
        save_controller(res.controller, args.out)
    sys.stdout.write(dumps_document(doc))
    if res.notes:
        for note in res.notes:
            print(f"note: {note}", file=sys.stderr)
    return 0


def run_scenario(path):
    """Run one scenario file; returns the report dict."""
    try:
        sc = load_scenario(path)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_FILE, f"cannot read scenario {path}: {exc}") from exc
    loop = assemble(sc.plant, sc.controller, sc.wiring)
    traj, rep = simulate(loop, sc.input, sc.sim, sc.x0, sc.xh0)
    if sc.trajectory_path:
        write_trajectory_csv(traj, sc.trajectory_path)
    d = rep.to_dict()
    if sc.report_path:
        with open(sc.report_path, 'w', encoding='utf-8') as fh:
            fh.write(json.dumps(d, indent=2) + '\n')
    return d


def _run_one(path):
    try:
        return path, 0, run_scenario(path), None
    except Exception as exc:  # reported per scenario
        code = _classify(exc)
        if code is None:
            raise
        return path, code, None, f"{type(exc).__name__}: {exc}"


def cmd_simulate(args):
    paths = args.scenario
    if args.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, paths))
    else:
        results = [_run_one(p) for p in paths]
    worst = 0
    for path, code, rep, msg in results:
        if code:
            print(f"{path}: error: {msg}", file=sys.stderr)
            worst = worst or code
        else:
            _print_json({'scenario': path, 'report': rep})
    return worst


def cmd_describe_fn(args):
    if not args.freqs:
        raise _Fail(EXIT_CONFIG, "need at least one frequency")
    p = HigsParams(args.k_h, args.omega_h)
    pts = describing_sweep(p, args.amplitude, args.freqs,
                           settle_cycles=args.settle,
                           measure_cycles=args.measure,
                           steps_per_cycle=args.steps_per_cycle)
    write_sweep_csv(pts, args.out if args.out else sys.stdout)
    return 0


# ---------------------------------------------------------------- demo

def _scenario_doc(controller, wiring, signal, sim, stem):
    return {'plant': 'mems_model.json', 'controller': controller,
            'wiring': wiring, 'input': signal, 'sim': sim,
            'outputs': {'trajectory': f'{stem}.csv',
                        'report': f'{stem}_report.json'}}


def cmd_demo_mems(args):
    out = args.out_dir
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, '.write_test')
        with open(probe, 'w') as fh:
            fh.write('')
        os.remove(probe)
    except OSError as exc:
        raise _Fail(EXIT_FS, f"cannot write to {out}: {exc}") from exc
    plant = load_plant(bundled_path('mems_model.json'))
    ctrl_doc = load_json(bundled_path('mems_controller.json'))
    save_plant(plant, os.path.join(out, 'mems_model.json'))
    with open(os.path.join(out, 'mems_controller.json'), 'w') as fh:
        fh.write(dumps_document(ctrl_doc))

    pulse = InputSignal('pulse_train', 0.1, 10.0, 0.5,
                        stop_time=args.pulse_stop).to_dict()
    sim = {'t_end': args.t_end, 'dt': args.dt, 'monitor': False,
           'record_every': args.record_every}
    docs = {
        'mems_pulse': _scenario_doc('mems_controller.json', 'plant_input',
                                    pulse, sim, 'mems_pulse'),
        'mems_pulse_open': _scenario_doc(None, 'plant_input', pulse, sim,
                                         'mems_pulse_open'),
        'mems_regulation': dict(
            _scenario_doc('mems_controller.json', 'plant_input',
                          {'kind': 'zero'},
                          {'t_end': 0.02, 'dt': args.dt, 'monitor': False,
                           'record_every': args.record_every},
                          'mems_regulation'),
            initial_state={'x': [0.5, 0.5, 0.5, 0.5], 'x_h': [0.0, 0.0]}),
    }
    for stem, doc in docs.items():
        with open(os.path.join(out, f'{stem}.json'), 'w') as fh:
            fh.write(dumps_document(doc))

    verdict = certify(plant, 'auto')
    ni_code = {True: EXIT_NI, False: EXIT_NOT_NI, None: EXIT_UNKNOWN}[
        verdict.is_ni]
    summary = {'check_ni': {'method': verdict.method,
                            'is_ni': verdict.is_ni, 'exit_code': ni_code,
                            'fallback_reason':
                                verdict.detail.get('fallback_reason')},
               'wiring': 'plant_input', 'runs': {}, 'settling': {}}
    trajs = {}
    for stem in docs:
        sc = load_scenario(os.path.join(out, f'{stem}.json'))
        loop = assemble(sc.plant, sc.controller, sc.wiring)
        traj, rep = simulate(loop, sc.input, sc.sim, sc.x0, sc.xh0)
        write_trajectory_csv(traj, sc.trajectory_path)
        with open(sc.report_path, 'w') as fh:
            fh.write(rep.to_json())
        summary['runs'][stem] = rep.to_dict()
        trajs[stem] = traj
    # settling after the falling edge (reference 0) and after the rising
    # edge (reference: level reached just before the fall)
    fall = 0.5 / 10.0
    ok = True
    for stem in ('mems_pulse', 'mems_pulse_open'):
        tr = trajs[stem]
        i = int(np.searchsorted(tr.times, fall)) - 1
        rows = []
        for ch in range(tr.y.shape[1]):
            rise = step_metrics(tr, ch, float(tr.y[i, ch]), window=(0.0, fall))
            drop = step_metrics(tr, ch, 0.0, window=(fall, args.t_end))
            rows.append({'axis': 'XY'[ch] if ch < 2 else str(ch),
                         'rise': {'overshoot': rise[0], 'settling_time': rise[1]},
                         'fall': {'overshoot': drop[0], 'settling_time': drop[1]}})
        summary['settling'][stem] = rows
    for edge in ('rise', 'fall'):
        for c, o in zip(summary['settling']['mems_pulse'],
                        summary['settling']['mems_pulse_open']):
            tc, to = c[edge]['settling_time'], o[edge]['settling_time']
            if tc is None or (to is not None and not tc < to):
                ok = False
    summary['closed_loop_settles_faster'] = ok
    with open(os.path.join(out, 'demo_summary.json'), 'w') as fh:
        fh.write(json.dumps(summary, indent=2) + '\n')
    _print_json(summary)
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; 2 means an unknown verdict
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(
        prog='higsni',
        description='NI certification, HIGS synthesis and hybrid simulation.')
    sub = ap.add_subparsers(dest='command', required=True,
                            parser_class=_Parser)

    p = sub.add_parser('check-ni', help='decide whether a plant is NI')
    p.add_argument('model', help='plant JSON with keys A, B, C')
    p.add_argument('--method', default='auto',
                   choices=['auto', 'sweep', 'hamiltonian', 'certificate'],
                   help='auto tries hamiltonian, then sweep')
    p.add_argument('--points', type=int, default=400,
                   help='sweep grid size (default 400)')
    p.add_argument('--wmin', type=float, help='sweep lower end, rad/s')
    p.add_argument('--wmax', type=float, help='sweep upper end, rad/s')
    p.set_defaults(func=cmd_check_ni)

    p = sub.add_parser('synthesize', help='HIGS gains from the DC gain')
    p.add_argument('model', help='plant JSON with keys A, B, C')
    p.add_argument('--topology', default='multi',
                   choices=['single', 'multi', 'cascade'])
    p.add_argument('--margin', type=float, default=0.1,
                   help='relative stability margin in (0, 1)')
    p.add_argument('--cap', type=float, default=100.0,
                   help='upper bound on each gain')
    p.add_argument('--omega-h', type=float, nargs='+',
                   help='integrator frequencies, rad/s')
    p.add_argument('--out', help='also write the controller JSON here')
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser('simulate', help='run scenario files')
    p.add_argument('scenario', nargs='+', help='scenario JSON files')
    p.add_argument('--jobs', type=int, default=1,
                   help='worker processes')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('describe-fn', help='describing-function sweep')
    p.add_argument('--k-h', type=float, required=True)
    p.add_argument('--omega-h', type=float, required=True)
    p.add_argument('--amplitude', type=float, default=1.0)
    p.add_argument('--freqs', type=float, nargs='+', required=True,
                   help='rad/s')
    p.add_argument('--settle', type=int, default=10,
                   help='periods discarded before measuring')
    p.add_argument('--measure', type=int, default=10,
                   help='periods used for the Fourier coefficients')
    p.add_argument('--steps-per-cycle', type=int, default=2000)
    p.add_argument('--out', help='CSV path (default: stdout)')
    p.set_defaults(func=cmd_describe_fn)

    p = sub.add_parser('demo-mems', help='bundled MEMS nanopositioner demo')
    p.add_argument('out_dir')
    p.add_argument('--dt', type=float, default=1e-6)
    p.add_argument('--t-end', type=float, default=0.15)
    p.add_argument('--pulse-stop', type=float, default=0.1,
                   help='time after which the pulse train stays at zero')
    p.add_argument('--record-every', type=int, default=10,
                   help='keep every n-th sample in the CSV files')
    p.set_defaults(func=cmd_demo_mems)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            # anything worth a warning is also written to the JSON notes
            warnings.simplefilter('ignore', UserWarning)
            return args.func(args)
    except Exception as exc:
        code = _classify(exc)
        if code is None:
            raise
        kind = '' if isinstance(exc, _Fail) else f"{type(exc).__name__}: "
        print(f"error: {kind}{exc}", file=sys.stderr)
        return code


if __name__ == '__main__':
    sys.exit(main())
