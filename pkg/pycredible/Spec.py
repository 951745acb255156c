"""
Controller specifications, observer annotations and ellipsoids.

A controller file is a JSON object holding the state-space matrices as
decimal strings (so they parse exactly), the state/input/output names, the
initial state and a list of ellipsoid observers. See docs/spec_schema.md.
"""

# Python
import re
import json
import math
import pkgutil
import logging
import dataclasses
from pathlib import Path
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional, Tuple

# External
import numpy as np

# Project
from pycredible.Linalg import (RationalMatrix, DimensionError, NotSymmetricError, ldlt_psd,
                               invert, quadratic_form, to_rational, render_decimal, PROVEN_PSD)


__all__ = ['SpecError', 'P_FORM', 'Q_FORM', 'INDUCTIVE', 'ASSERTIVE', 'AUTO',
           'Ellipsoid', 'ObserverSpec', 'InputSpec', 'ControllerSpec', 'StateBounds',
           'load_spec', 'load_fixture', 'spec_from_dict', 'spec_to_dict', 'save_spec',
           'to_qform', 'to_pform', 'contains', 'state_bounds']


logger = logging.getLogger(__name__)

P_FORM = 'P'
Q_FORM = 'Q'

INDUCTIVE = 'inductive'
ASSERTIVE = 'assertive'
AUTO = 'auto'

_IDENT_PAT = re.compile(r'[A-Za-z_][A-Za-z0-9_]*\Z')


class SpecError(ValueError):
    """Specification problem, ``field`` being a dotted path such as 'observers[1].mu'."""
    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f'{field}: {message}')

    def under(self, prefix):
        field = f'{prefix}.{self.field}' if self.field else prefix
        return SpecError(field, self.message)


def _check_identifier(name, field):
    if not isinstance(name, str) or not _IDENT_PAT.match(name):
        raise SpecError(field, f'{name!r} is not a valid identifier')
    if name.startswith('_'):
        raise SpecError(field, f'{name!r}: leading underscores are reserved')


# ------------------ ellipsoids --------------------


@dataclass(frozen=True)
class Ellipsoid:
    """
    Ellipsoid over an ordered variable support.

    P-form: {x : x^T P x <= 1}, P positive definite.
    Q-form: {x : [[1, x^T], [x, Q]] PSD}, Q positive semidefinite; a
    rank-deficient Q (a flat ellipsoid) is allowed while ``degenerate_ok``.
    """
    form: str
    matrix: RationalMatrix
    support: Tuple[str, ...]
    degenerate_ok: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'matrix', RationalMatrix(self.matrix))
        object.__setattr__(self, 'support', tuple(self.support))

        # ------ integrity checks -------
        if self.form not in {P_FORM, Q_FORM}:
            raise ValueError(f'Invalid ellipsoid form: {self.form}')
        if not self.matrix.is_square:
            raise DimensionError(f'Ellipsoid matrix must be square, got shape {self.matrix.shape}')
        if len(self.support) != self.matrix.rows:
            raise DimensionError(f'Support of {len(self.support)} variable(s) does not match '
                                 f'a {self.matrix.rows}x{self.matrix.rows} matrix')
        if len(set(self.support)) != len(self.support):
            raise ValueError(f'Repeated variables in support {self.support}')
        if not self.matrix.is_symmetric():
            raise NotSymmetricError(f'Ellipsoid matrix over {self.support} is not symmetric')

        verdict = ldlt_psd(self.matrix)
        strict = verdict.proven and (verdict.margin is None or verdict.margin > 0)
        if self.form == P_FORM and not strict:
            raise ValueError(f'P-form matrix over {self.support} is not positive definite')
        if self.form == Q_FORM and not verdict.proven:
            raise ValueError(f'Q-form matrix over {self.support} is not positive semidefinite')
        if self.form == Q_FORM and not self.degenerate_ok and not strict:
            raise ValueError(f'Q-form matrix over {self.support} is degenerate')

    @property
    def dim(self):
        return len(self.support)

    def index(self, var):
        return self.support.index(var)

    def __repr__(self):
        return f'<Ellipsoid {self.form}-form over ({", ".join(self.support)})>'


def to_qform(e):
    """Q-form counterpart (Q = P^-1); identity on Q-form ellipsoids."""
    if e.form == Q_FORM:
        return e
    return Ellipsoid(Q_FORM, invert(e.matrix), e.support)


def to_pform(e):
    """P-form counterpart; raises SingularMatrixError on degenerate Q-forms."""
    if e.form == P_FORM:
        return e
    return Ellipsoid(P_FORM, invert(e.matrix), e.support)


def contains(e, point):
    """
    Exact membership of a point (ordered as the support) in the ellipsoid.
    Q-form membership is the PSD test of the Schur form [[1, x^T], [x, Q]].
    """
    x = [to_rational(v) for v in point]
    if len(x) != e.dim:
        raise DimensionError(f'Point of size {len(x)} for an ellipsoid of dimension {e.dim}')
    if e.form == P_FORM:
        return quadratic_form(e.matrix, x) <= 1
    schur = [[Fraction(1)] + x] + [[xi] + row for xi, row in zip(x, e.matrix.tolist())]
    return ldlt_psd(schur).status == PROVEN_PSD


@dataclass(frozen=True)
class StateBounds:
    """
    ``radicands[i]`` is Q_ii with Q = P^-1, so |x_i| <= sqrt(radicands[i]).
    ``axis_bounds`` holds float enclosures [lo, hi] of 1/sqrt(sigma_i(P)),
    eigenvalues taken in ascending order.
    """
    support: Tuple[str, ...]
    radicands: Tuple[Fraction, ...]
    axis_bounds: Tuple[Tuple[float, float], ...]

    def coordinate_bounds(self):
        return tuple(math.sqrt(r) for r in self.radicands)


def state_bounds(e):
    """
    Coordinate and principal-axis bounds of a P-form ellipsoid.

    Each eigenvalue estimate from ``numpy.linalg.eigh`` is enclosed by its
    exact residual radius (for symmetric matrices some eigenvalue lies within
    ||P v - w v|| / ||v|| of w); the enclosure is then carried through
    1/sqrt with outward rounding.
    """
    if e.form != P_FORM:
        raise ValueError('state_bounds expects a P-form ellipsoid')
    q = invert(e.matrix)
    radicands = tuple(q[i, i] for i in range(e.dim))

    w, vecs = np.linalg.eigh(e.matrix.to_float())
    axis = []
    for i in range(e.dim):
        v = [to_rational(float(x)) for x in vecs[:, i]]
        lam = to_rational(float(w[i]))
        residual = e.matrix @ RationalMatrix.column(v) - RationalMatrix.column(v) * lam
        rho2 = sum(residual[j, 0] ** 2 for j in range(e.dim)) / sum(x * x for x in v)
        rho = math.nextafter(math.sqrt(math.nextafter(float(rho2), math.inf)), math.inf)
        lo = math.nextafter(float(w[i]) - rho, -math.inf)
        hi = math.nextafter(float(w[i]) + rho, math.inf)
        if not lo > 0:
            raise ValueError(f'Cannot certify eigenvalue {w[i]!r} of P as positive')
        axis.append((math.nextafter(1 / math.nextafter(math.sqrt(hi), math.inf), -math.inf),
                     math.nextafter(1 / math.nextafter(math.sqrt(lo), -math.inf), math.inf)))
    return StateBounds(e.support, radicands, tuple(axis))


# ------------------ specifications --------------------


@dataclass(frozen=True)
class ObserverSpec:
    """
    Ellipsoid observer: an invariant (inductive) or an assumption
    (assertive) over the listed variables, with its S-procedure multiplier.
    """
    label: str
    variables: Tuple[str, ...]
    form: str
    matrix: RationalMatrix
    mu: Fraction
    kind: str = AUTO

    def __post_init__(self):
        object.__setattr__(self, 'variables', tuple(self.variables))
        object.__setattr__(self, 'matrix', RationalMatrix(self.matrix))
        object.__setattr__(self, 'mu', to_rational(self.mu))

        # ------ integrity checks -------
        _check_identifier(self.label, 'label')
        if self.kind not in {INDUCTIVE, ASSERTIVE, AUTO}:
            raise SpecError('kind', f'{self.kind!r} is not one of inductive, assertive, auto')
        if self.form not in {P_FORM, Q_FORM}:
            raise SpecError('form', f'{self.form!r} is not one of P, Q')
        if not self.variables:
            raise SpecError('variables', 'at least one variable is required')
        for i, var in enumerate(self.variables):
            _check_identifier(var, f'variables[{i}]')
        if not 0 < self.mu < 1:
            raise SpecError('mu', f'multiplier {self.mu} is not in (0, 1)')
        if self.matrix.shape != (len(self.variables),) * 2:
            raise SpecError('matrix', f'shape {self.matrix.shape} does not match '
                                      f'{len(self.variables)} variable(s)')
        if not self.matrix.is_symmetric():
            raise SpecError('matrix', 'not symmetric')
        try:
            self.ellipsoid
        except ValueError as exc:
            raise SpecError('matrix', str(exc)) from None

    @property
    def ellipsoid(self):
        return Ellipsoid(self.form, self.matrix, self.variables)

    @property
    def qform(self):
        return to_qform(self.ellipsoid)


@dataclass(frozen=True)
class InputSpec:
    """
    Controller input. Plain inputs are read from the I/O struct; reference
    inputs are computed as ``signal - reference``.
    """
    name: str
    signal: Optional[str] = None
    reference: Optional[str] = None

    def __post_init__(self):
        _check_identifier(self.name, 'name')
        if (self.signal is None) != (self.reference is None):
            raise SpecError('signal', 'signal and reference must be given together')
        if self.signal is not None:
            _check_identifier(self.signal, 'signal')
            _check_identifier(self.reference, 'reference')
            if self.signal == self.reference:
                raise SpecError('reference', 'signal and reference must differ')

    @property
    def is_reference(self):
        return self.signal is not None

    @property
    def io_signals(self):
        return (self.signal, self.reference) if self.is_reference else (self.name,)


@dataclass(frozen=True)
class ControllerSpec:
    """
    Discrete-time linear controller x+ = A x + B y, u = C x + D y.
    """
    name: str
    A: RationalMatrix
    B: RationalMatrix
    C: RationalMatrix
    D: RationalMatrix
    state_names: Tuple[str, ...]
    inputs: Tuple[InputSpec, ...]
    output_names: Tuple[str, ...]
    x0: Tuple[Fraction, ...]
    observers: Tuple[ObserverSpec, ...] = ()

    def __post_init__(self):
        for attr in 'ABCD':
            object.__setattr__(self, attr, RationalMatrix(getattr(self, attr)))
        object.__setattr__(self, 'state_names', tuple(self.state_names))
        object.__setattr__(self, 'inputs', tuple(i if isinstance(i, InputSpec) else InputSpec(i)
                                                 for i in self.inputs))
        object.__setattr__(self, 'output_names', tuple(self.output_names))
        object.__setattr__(self, 'x0', tuple(to_rational(v) for v in self.x0))
        object.__setattr__(self, 'observers', tuple(self.observers))

        # ------ integrity checks -------
        _check_identifier(self.name, 'name')
        for field, names in (('states', self.state_names), ('outputs', self.output_names)):
            for i, n in enumerate(names):
                _check_identifier(n, f'{field}[{i}]')

        n, m, k = self.n, self.m, self.k
        for attr, shape in (('A', (n, n)), ('B', (n, m)), ('C', (k, n)), ('D', (k, m))):
            got = getattr(self, attr).shape
            if got != shape:
                raise SpecError(attr, f'expected shape {shape}, got {got}')
        if len(self.x0) != n:
            raise SpecError('x0', f'expected {n} entries, got {len(self.x0)}')

        # input names and their io signals may repeat a reference, nothing else
        names = list(self.state_names) + list(self.input_names) + list(self.output_names)
        names += [s for s in self.io_inputs if s not in self.input_names]
        dupes = sorted({x for x in names if names.count(x) > 1})
        if dupes:
            raise SpecError('<root>', f'names used more than once: {dupes}')

    @property
    def n(self):
        return len(self.state_names)

    @property
    def m(self):
        return len(self.inputs)

    @property
    def k(self):
        return len(self.output_names)

    @property
    def input_names(self):
        return tuple(i.name for i in self.inputs)

    @property
    def io_inputs(self):
        """Raw I/O signals read by the controller, in first-use order."""
        seen = []
        for inp in self.inputs:
            for s in inp.io_signals:
                if s not in seen:
                    seen.append(s)
        return tuple(seen)

    def effective_inputs(self, raw):
        """Controller input vector from raw I/O signal values (mapping or sequence)."""
        if not isinstance(raw, dict):
            raw = dict(zip(self.io_inputs, raw))
        values = []
        for inp in self.inputs:
            if inp.is_reference:
                values.append(to_rational(raw[inp.signal]) - to_rational(raw[inp.reference]))
            else:
                values.append(to_rational(raw[inp.name]))
        return tuple(values)

    def step(self, x, y):
        """Exact (u, x+) straight from the state-space matrices."""
        x = RationalMatrix.column(x) if self.n else RationalMatrix.zeros(0, 1)
        y = RationalMatrix.column(y) if self.m else RationalMatrix.zeros(0, 1)
        u = self.C @ x + self.D @ y
        x_next = self.A @ x + self.B @ y
        return tuple(u[i, 0] for i in range(self.k)), tuple(x_next[i, 0] for i in range(self.n))

    def with_matrix(self, attr, matrix):
        """Copy with one of A, B, C, D replaced."""
        if attr not in {'A', 'B', 'C', 'D'}:
            raise ValueError(f'Invalid matrix name: {attr}')
        return dataclasses.replace(self, **{attr: RationalMatrix(matrix)})

    def with_observers(self, observers):
        return dataclasses.replace(self, observers=tuple(observers))

    def __repr__(self):
        return f'<ControllerSpec {self.name} n={self.n} m={self.m} k={self.k}>'


# ------------------ file ingestion --------------------


def _matrix_field(data, field, shape=None):
    value = data.get(field)
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise SpecError(field, 'expected an array of arrays of decimal strings')
    for i, row in enumerate(value):
        for j, entry in enumerate(row):
            if isinstance(entry, (float, bool)) or not isinstance(entry, (str, int)):
                raise SpecError(f'{field}[{i}][{j}]', f'expected a decimal string, got {entry!r}')
    if value and len({len(r) for r in value}) != 1:
        raise SpecError(field, 'rows have different lengths')
    try:
        if not value and shape:
            return RationalMatrix.zeros(*shape)
        return RationalMatrix(value)
    except ValueError as exc:
        raise SpecError(field, str(exc)) from None


def _names_field(data, field):
    value = data.get(field, [])
    if not isinstance(value, list):
        raise SpecError(field, 'expected an array of identifiers')
    return value


def _observer_from_dict(item):
    if not isinstance(item, dict):
        raise SpecError('', 'expected an object')
    missing = [k for k in ('label', 'form', 'matrix', 'mu', 'variables') if k not in item]
    if missing:
        raise SpecError('', f'missing keys {missing}')
    mu = item['mu']
    if isinstance(mu, (float, bool)) or not isinstance(mu, (str, int)):
        raise SpecError('mu', f'expected a decimal string, got {mu!r}')
    try:
        mu = to_rational(mu)
    except ValueError as exc:
        raise SpecError('mu', str(exc)) from None
    return ObserverSpec(label=item['label'], variables=_names_field(item, 'variables'),
                        form=item['form'], matrix=_matrix_field(item, 'matrix'), mu=mu,
                        kind=item.get('kind', AUTO))


def _input_from_json(item):
    if isinstance(item, str):
        return InputSpec(item)
    if isinstance(item, dict) and 'name' in item:
        return InputSpec(item['name'], item.get('signal'), item.get('reference'))
    raise SpecError('', f'expected an identifier or a {{name, signal, reference}} object')


def spec_from_dict(data):
    """
    Validated ``ControllerSpec`` from the decoded JSON object.

    Raises
    ------
    SpecError
        With the dotted path of the offending field
    """
    if not isinstance(data, dict):
        raise SpecError('<root>', f'expected a JSON object, got {data.__class__.__name__}')
    missing = [k for k in ('name', 'A', 'B', 'C', 'D', 'states', 'inputs', 'outputs')
               if k not in data]
    if missing:
        raise SpecError('<root>', f'missing keys {missing}')

    states = _names_field(data, 'states')
    outputs = _names_field(data, 'outputs')
    inputs = []
    for i, item in enumerate(_names_field(data, 'inputs')):
        try:
            inputs.append(_input_from_json(item))
        except SpecError as exc:
            raise exc.under(f'inputs[{i}]') from None
    n, m, k = len(states), len(inputs), len(outputs)

    x0 = data.get('x0', ['0'] * n)
    if not isinstance(x0, list):
        raise SpecError('x0', 'expected an array of decimal strings')
    try:
        x0 = [to_rational(v) for v in x0]
    except (ValueError, TypeError) as exc:
        raise SpecError('x0', str(exc)) from None

    observers = []
    for i, item in enumerate(data.get('observers', [])):
        try:
            observers.append(_observer_from_dict(item))
        except SpecError as exc:
            raise exc.under(f'observers[{i}]') from None

    spec = ControllerSpec(name=data['name'],
                          A=_matrix_field(data, 'A', (n, n)), B=_matrix_field(data, 'B', (n, m)),
                          C=_matrix_field(data, 'C', (k, n)), D=_matrix_field(data, 'D', (k, m)),
                          state_names=states, inputs=inputs, output_names=outputs,
                          x0=x0, observers=observers)
    logger.info(f'Loaded spec {spec.name} (n={spec.n}, m={spec.m}, k={spec.k}, '
                f'{len(spec.observers)} observer(s))')
    return spec


def load_spec(path):
    """Reads and validates a controller JSON file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f'file not found: {path}')
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError('<root>', f'invalid JSON: {exc}') from None
    return spec_from_dict(data)


def load_fixture(name):
    """
    Spec shipped with the package (e.g. 'running_example').
    """
    try:
        # loading package static data: see Python Cookbook 3rd ed. recipe 10.8
        data = pkgutil.get_data(__package__, f'fixtures/{name}.json')
    except FileNotFoundError:
        raise SpecError('fixture', f'no packaged fixture named {name!r}') from None
    return spec_from_dict(json.loads(data.decode()))


def _exact_str(value):
    return render_decimal(value) or f'{value.numerator}/{value.denominator}'


def _matrix_to_json(m):
    return [[_exact_str(v) for v in row] for row in m.tolist()]


def spec_to_dict(spec):
    """Inverse of ``spec_from_dict``; every number is written exactly."""
    inputs = [{'name': i.name, 'signal': i.signal, 'reference': i.reference}
              if i.is_reference else i.name for i in spec.inputs]
    return {
        'name': spec.name,
        'A': _matrix_to_json(spec.A), 'B': _matrix_to_json(spec.B),
        'C': _matrix_to_json(spec.C), 'D': _matrix_to_json(spec.D),
        'states': list(spec.state_names), 'inputs': inputs,
        'outputs': list(spec.output_names),
        'x0': [_exact_str(v) for v in spec.x0],
        'observers': [{'label': o.label, 'kind': o.kind, 'form': o.form,
                       'matrix': _matrix_to_json(o.matrix), 'mu': _exact_str(o.mu),
                       'variables': list(o.variables)} for o in spec.observers],
    }


def save_spec(spec, path):
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + '\n')
