"""
Command line: ``pycredible {autocode,check,lmi,simulate}``.

Exit codes: 0 proven, 1 refuted or not certifiable, 2 usage or input
errors, 3 internal errors.
"""

# Python
import sys
import json
import logging
import argparse
from pathlib import Path
from dataclasses import dataclass
from typing import Optional

# Project
from pycredible._version import __version__
from pycredible.Linalg import (DecimalParseError, PROVEN_PSD, DEFAULT_SHIFT, render_float)
from pycredible.Spec import (SpecError, Ellipsoid, P_FORM, load_spec, load_fixture, contains,
                             state_bounds)
from pycredible.Codegen import lower, CEmitter
from pycredible.Annotation import annotate
from pycredible.Propagation import propagate
from pycredible.Stability import INPUT_MODES, certificate_from_spec, check_lmi, simulate
from pycredible.Checker import (GrammarError, PROVEN, parse_annotated_c, check_artifact,
                                check_final_containment)


__all__ = ['RunConfig', 'DEFAULT_EPSILON', 'DEFAULT_SEED', 'DEFAULT_STEPS', 'EXIT_PROVEN',
           'EXIT_REFUTED', 'EXIT_USAGE', 'EXIT_INTERNAL', 'autocode', 'check', 'lmi',
           'simulate_command', 'main']


logger = logging.getLogger(__name__)

DEFAULT_EPSILON = DEFAULT_SHIFT
DEFAULT_SEED = 0
DEFAULT_STEPS = 1000

EXIT_PROVEN = 0
EXIT_REFUTED = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

SUBCOMMANDS = ('autocode', 'check', 'lmi', 'simulate')


@dataclass(frozen=True)
class RunConfig:
    """One command line invocation, validated before any work starts."""
    subcommand: str
    input_path: Optional[Path] = None
    fixture: Optional[str] = None
    output_path: Optional[Path] = None
    report_path: Optional[Path] = None
    epsilon: float = DEFAULT_EPSILON
    seed: int = DEFAULT_SEED
    steps: int = DEFAULT_STEPS
    input_mode: str = 'uniform'
    constant: Optional[tuple] = None
    alpha: Optional[str] = None
    fail_on_unknown: bool = False
    verbosity: int = 0

    def __post_init__(self):
        # ------ integrity checks -------
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f'Unknown subcommand {self.subcommand!r}')
        if (self.input_path is None) == (self.fixture is None):
            raise ValueError('Give exactly one of an input path or a fixture name')
        if self.fixture is not None and self.subcommand == 'check':
            raise ValueError('check reads a C file, not a fixture')
        if self.input_path is not None and not Path(self.input_path).is_file():
            raise FileNotFoundError(f'file not found: {self.input_path}')
        if not self.epsilon >= 0:
            raise ValueError(f'epsilon must be nonnegative, got {self.epsilon}')
        if self.steps < 0:
            raise ValueError(f'steps must be nonnegative, got {self.steps}')
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f'Invalid input mode {self.input_mode!r}')
        if self.input_mode == 'constant' and self.constant is None:
            raise ValueError("--input-mode constant needs --constant")

    @classmethod
    def from_args(cls, args):
        return cls(subcommand=args.subcommand,
                   input_path=args.input,
                   fixture=getattr(args, 'fixture', None),
                   output_path=getattr(args, 'output', None),
                   report_path=getattr(args, 'report', None),
                   epsilon=getattr(args, 'epsilon', DEFAULT_EPSILON),
                   seed=getattr(args, 'seed', DEFAULT_SEED),
                   steps=getattr(args, 'steps', DEFAULT_STEPS),
                   input_mode=getattr(args, 'input_mode', 'uniform'),
                   constant=tuple(args.constant) if getattr(args, 'constant', None) else None,
                   alpha=getattr(args, 'alpha', None),
                   fail_on_unknown=getattr(args, 'fail_on_unknown', False),
                   verbosity=args.verbose)

    def load_spec(self):
        return load_fixture(self.fixture) if self.fixture else load_spec(self.input_path)


# ------------------ output helpers --------------------


def _write_text(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info(f'Wrote {path}')


def _dump(payload):
    return json.dumps(payload, indent=2) + '\n'


def _ellipsoid_dict(e):
    return {'form': e.form,
            'support': list(e.support),
            'matrix': [[str(v) for v in row] for row in e.matrix.tolist()],
            'matrix_float': [[render_float(v) for v in row] for row in e.matrix.tolist()]}


def _lmi_payload(spec, alpha):
    try:
        cert = certificate_from_spec(spec, alpha)
        verdict = check_lmi(spec, cert)
    except ValueError as exc:
        logger.warning(f'No LMI verdict: {exc}')
        return None, {'verdict': None, 'detail': str(exc)}
    return cert, {**verdict.to_dict(), 'alpha': str(cert.alpha)}


# ------------------ subcommands --------------------


def autocode(config):
    """
    Lowers, annotates and propagates the spec, writes the annotated C and a
    generation report. Proven iff the generated final ellipsoid lies in the
    declared contract postcondition.
    """
    spec = config.load_spec()
    program = lower(spec)
    annotated = annotate(program, spec.observers)
    result = propagate(annotated)
    emitter = CEmitter(program, result.annotated)
    text = emitter.emit()
    _write_text(config.output_path, text)

    declared = result.annotated.contract.post
    containment = check_final_containment(result.generated.matrix, declared.matrix,
                                          result.generated.support, declared.support)
    initial = contains(result.annotated.contract.pre, program.x0)
    _, lmi_report = _lmi_payload(spec, config.alpha)

    if config.report_path is not None:
        report = {
            'name': spec.name,
            'tool_version': __version__,
            'statements': len(program),
            'triples': len(result.annotated.triples),
            'records': [r.to_dict() for r in result.records],
            'generated': _ellipsoid_dict(result.generated),
            'declared': _ellipsoid_dict(declared),
            'final_containment': containment.to_dict(),
            'initial_state': {'verdict': PROVEN if initial else 'Refuted'},
            'lmi_check': lmi_report,
            'fraction_literals': list(emitter.fraction_literals),
        }
        _write_text(config.report_path, _dump(report))

    logger.info(f'Final containment for {spec.name}: {containment.status}')
    if containment.status != PROVEN_PSD:
        logger.error(f'{spec.name}: the generated postcondition does not imply the declared '
                     f'one ({containment.status})')
        return EXIT_REFUTED
    return EXIT_PROVEN


def check(config):
    """Parses annotated C and checks it; Proven iff every obligation is."""
    parsed = parse_annotated_c(Path(config.input_path).read_text())
    report = check_artifact(parsed, config.epsilon)
    payload = report.to_json()
    if config.report_path is not None:
        _write_text(config.report_path, payload)
    else:
        sys.stdout.write(payload)

    if report.overall != PROVEN:
        return EXIT_REFUTED
    if config.fail_on_unknown and (report.float_check is None
                                   or report.float_check.status != PROVEN_PSD):
        logger.error(f'Float cross-check is '
                     f'{report.float_check.status if report.float_check else "missing"}')
        return EXIT_REFUTED
    return EXIT_PROVEN


def lmi(config):
    """Exact LMI check of the spec's certificate, with the state bounds of P."""
    spec = config.load_spec()
    cert, lmi_report = _lmi_payload(spec, config.alpha)
    if cert is None:
        _write_text(config.report_path, _dump({'name': spec.name, 'lmi_check': lmi_report}))
        return EXIT_REFUTED

    bounds = state_bounds(Ellipsoid(P_FORM, cert.P, spec.state_names))
    payload = {
        'name': spec.name,
        'tool_version': __version__,
        'lmi_check': lmi_report,
        'state_bounds': {'support': list(bounds.support),
                         'radicands': [str(r) for r in bounds.radicands],
                         'coordinate_bounds': list(bounds.coordinate_bounds()),
                         'axis_bounds': [list(b) for b in bounds.axis_bounds]},
    }
    _write_text(config.report_path, _dump(payload))
    return EXIT_PROVEN if lmi_report['verdict'] == PROVEN_PSD else EXIT_REFUTED


def simulate_command(config):
    """Writes the CSV trace; Proven iff the level stays at most 1."""
    spec = config.load_spec()
    constant = [float(v) for v in config.constant] if config.constant else None
    trace = simulate(spec, config.steps, config.seed, config.input_mode, constant)
    _write_text(config.output_path, trace.to_csv())
    if trace.max_level > 1:
        logger.error(f'{spec.name}: level reached {trace.max_level!r} within {trace.steps} steps')
        return EXIT_REFUTED
    return EXIT_PROVEN


_HANDLERS = {'autocode': autocode, 'check': check, 'lmi': lmi, 'simulate': simulate_command}


# ------------------ parser --------------------


def _parse_args(argv=None):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for INFO, -vv for DEBUG logging on stderr')

    def spec_source(sub):
        group = sub.add_mutually_exclusive_group(required=True)
        group.add_argument('input', nargs='?', type=Path, help='controller spec (JSON)')
        group.add_argument('--fixture', help='packaged spec, e.g. running_example')

    parser = argparse.ArgumentParser(prog='pycredible', parents=[common],
                                     description='Credible autocoding of linear controllers.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subs = parser.add_subparsers(dest='subcommand', required=True)

    sub = subs.add_parser('autocode', parents=[common],
                          help='emit annotated C and a generation report')
    spec_source(sub)
    sub.add_argument('-o', '--output', type=Path, help='C file (default: stdout)')
    sub.add_argument('--report', type=Path, help='generation report (JSON)')
    sub.add_argument('--alpha', help='decay share for the LMI in the report')

    sub = subs.add_parser('check', parents=[common], help='check an annotated C file')
    sub.add_argument('input', type=Path, help='annotated C file')
    sub.add_argument('--report', type=Path, help='verification report (default: stdout)')
    sub.add_argument('--epsilon', type=float, default=DEFAULT_EPSILON,
                     help='diagonal shift of the float cross-check (default: 2**-30)')
    sub.add_argument('--fail-on-unknown', action='store_true',
                     help='fail unless the float cross-check is ProvenPSD')

    sub = subs.add_parser('lmi', parents=[common], help='exact LMI check of the spec')
    spec_source(sub)
    sub.add_argument('--report', type=Path, help='LMI report (default: stdout)')
    sub.add_argument('--alpha', help='decay share, default 1 - mu of the inductive observer')

    sub = subs.add_parser('simulate', parents=[common], help='write a float simulation trace')
    spec_source(sub)
    sub.add_argument('-o', '--output', type=Path, help='CSV trace (default: stdout)')
    sub.add_argument('--steps', type=int, default=DEFAULT_STEPS)
    sub.add_argument('--seed', type=int, default=DEFAULT_SEED)
    sub.add_argument('--input-mode', choices=INPUT_MODES, default='uniform')
    sub.add_argument('--constant', type=float, nargs='+', help='inputs for --input-mode constant')

    args = parser.parse_args(argv)
    if args.subcommand == 'check':
        args.fixture = None
    return args


def _configure_logging(verbosity):
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format='%(levelname)s %(name)s: %(message)s')


def main(argv=None):
    try:
        args = _parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    _configure_logging(args.verbose)

    try:
        config = RunConfig.from_args(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f'pycredible: error: {exc}', file=sys.stderr)
        return EXIT_USAGE

    try:
        return _HANDLERS[config.subcommand](config)
    except (FileNotFoundError, SpecError, GrammarError, DecimalParseError) as exc:
        print(f'pycredible: error: {exc}', file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f'pycredible: {exc.__class__.__name__}: {exc}', file=sys.stderr)
        return EXIT_REFUTED
    except Exception as exc:
        logger.exception('Internal error')
        print(f'pycredible: internal error: {exc}', file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == '__main__':
    sys.exit(main())
