"""
Straight-line lowering of a controller and C emission.

``lower`` turns x+ = A x + B y, u = C x + D y into scalar affine
assignments (the loop body), ``interpret`` evaluates them exactly and
``emit_c`` writes the C source with its ACSL annotation comments. The
emitted grammar is documented in docs/acsl_grammar.md.
"""

# Python
import logging
from fractions import Fraction
from dataclasses import dataclass
from typing import Tuple

# Project
from pycredible._version import __version__
from pycredible.Linalg import RationalMatrix, render_decimal, render_rational, to_rational
from pycredible.Spec import ControllerSpec


__all__ = ['LoweringError', 'InterpretError', 'AffineAssignment', 'StraightLineProgram',
           'CEmitter', 'lower', 'interpret', 'emit_c', 'render_c_scalar', 'render_acsl_scalar',
           'AFFINE_ELLIPSOID', 'REDUCE_ELLIPSOID', 'SPROCEDURE', 'TACTICS', 'DEFAULT_SPLIT']


logger = logging.getLogger(__name__)

AFFINE_ELLIPSOID = 'AffineEllipsoid'
REDUCE_ELLIPSOID = 'ReduceEllipsoid'
SPROCEDURE = 'SProcedure'

# proof strategies named in PROOF_TACTIC; ReduceEllipsoid steps use AffineEllipsoid
TACTICS = (AFFINE_ELLIPSOID, SPROCEDURE)

STATE_PTR = '_state_'
IO_PTR = '_io_'

# share of the linear part when an assignment adds a nonzero constant
DEFAULT_SPLIT = Fraction(1, 2)


class LoweringError(ValueError):
    pass


class InterpretError(ValueError):
    pass


# ------------------ IR --------------------


@dataclass(frozen=True)
class AffineAssignment:
    """
    lhs := sum(c * v for v, c in coeffs) + constant

    ``coeffs`` keeps its order; this is the row L of the assignment.
    """
    lhs: str
    coeffs: Tuple[Tuple[str, Fraction], ...] = ()
    constant: Fraction = Fraction(0)

    def __post_init__(self):
        items = self.coeffs.items() if isinstance(self.coeffs, dict) else self.coeffs
        coeffs = tuple((v, to_rational(c)) for v, c in items)
        object.__setattr__(self, 'coeffs', coeffs)
        object.__setattr__(self, 'constant', to_rational(self.constant))
        names = [v for v, _ in coeffs]
        if len(set(names)) != len(names):
            raise ValueError(f'Repeated variables in the right-hand side of {self.lhs}')

    @property
    def variables(self):
        return tuple(v for v, _ in self.coeffs)

    def coeff(self, var):
        return dict(self.coeffs).get(var, Fraction(0))

    def evaluate(self, env):
        try:
            return sum((c * env[v] for v, c in self.coeffs), self.constant)
        except KeyError as exc:
            raise InterpretError(f'{exc.args[0]} used before definition in {self!r}') from None

    def __repr__(self):
        terms = [f'{c}*{v}' for v, c in self.coeffs]
        if self.constant or not terms:
            terms.append(str(self.constant))
        return f'<AffineAssignment {self.lhs} = {" + ".join(terms)}>'


@dataclass(frozen=True)
class StraightLineProgram:
    """
    Loop body of a controller.

    ``input_vars`` and ``output_vars`` live in the I/O struct, ``state_vars``
    in the state struct; ``temps`` are locals. Every variable read is an
    input, a state variable or assigned earlier.
    """
    name: str
    input_vars: Tuple[str, ...]
    output_vars: Tuple[str, ...]
    state_vars: Tuple[str, ...]
    temps: Tuple[str, ...]
    stmts: Tuple[AffineAssignment, ...]
    x0: Tuple[Fraction, ...] = ()

    def __post_init__(self):
        for attr in ('input_vars', 'output_vars', 'state_vars', 'temps', 'stmts'):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        x0 = self.x0 or (Fraction(0),) * len(self.state_vars)
        object.__setattr__(self, 'x0', tuple(to_rational(v) for v in x0))

        # ------ integrity checks -------
        names = self.input_vars + self.output_vars + self.state_vars + self.temps
        dupes = sorted({v for v in names if names.count(v) > 1})
        if dupes:
            raise ValueError(f'Variables declared more than once: {dupes}')
        if len(self.x0) != len(self.state_vars):
            raise ValueError(f'{len(self.x0)} initial value(s) for {len(self.state_vars)} states')

        writable = set(self.output_vars) | set(self.state_vars) | set(self.temps)
        defined = set(self.input_vars) | set(self.state_vars)
        for i, stmt in enumerate(self.stmts):
            undefined = [v for v in stmt.variables if v not in defined]
            if undefined:
                raise ValueError(f'Statement {i} reads {undefined} before definition')
            if stmt.lhs not in writable:
                raise ValueError(f'Statement {i} assigns undeclared or read-only {stmt.lhs!r}')
            defined.add(stmt.lhs)
        unassigned = [v for v in self.output_vars + self.temps if v not in defined]
        if unassigned:
            raise ValueError(f'Never assigned: {unassigned}')

    @property
    def io_vars(self):
        return self.input_vars + self.output_vars

    def kind_of(self, var):
        """'input', 'output', 'state' or 'temp'."""
        for kind, group in (('input', self.input_vars), ('output', self.output_vars),
                            ('state', self.state_vars), ('temp', self.temps)):
            if var in group:
                return kind
        raise KeyError(f'Unknown variable {var!r} in program {self.name}')

    def __len__(self):
        return len(self.stmts)

    def __repr__(self):
        return f'<StraightLineProgram {self.name} ({len(self.stmts)} statements)>'


# ------------------ lowering --------------------


class _NameTable:
    """Hands out fresh names; a taken name gets a _1, _2, ... suffix."""

    def __init__(self, reserved):
        self.taken = set(reserved)

    def fresh(self, base):
        name, k = base, 0
        while name in self.taken:
            k += 1
            name = f'{base}_{k}'
        self.taken.add(name)
        return name


def _gain_name(prefix, i, j):
    return f'{prefix}{i + 1}{j + 1}' if i < 9 and j < 9 else f'{prefix}{i + 1}_{j + 1}'


def lower(spec):
    """
    Straight-line program of a controller.

    Statement order: reference inputs (``Sum4 = y - yd``), state copies
    (``x1 = Integrator_1_memory``), each output row (gain temps then the
    sum), next-state gain temps row by row, and last the state writes.
    Unit coefficients use the variable directly; zero terms are skipped.

    Parameters
    ----------
    spec: ControllerSpec

    Returns
    -------
    StraightLineProgram
    """
    if not isinstance(spec, ControllerSpec):
        raise TypeError(f'Expected ControllerSpec, got {spec.__class__.__name__}')
    if spec.n == 0:
        raise LoweringError('At least one state is required for inductive semantics')

    table = _NameTable(spec.state_names + spec.input_names + spec.output_names + spec.io_inputs)
    stmts = []
    temps = []

    def emit(lhs, coeffs, temp=True):
        stmts.append(AffineAssignment(lhs, coeffs))
        if temp:
            temps.append(lhs)

    for inp in spec.inputs:
        if inp.is_reference:
            emit(inp.name, ((inp.signal, 1), (inp.reference, -1)))

    copies = {}
    for j, state in enumerate(spec.state_names):
        column_used = any(spec.A[i, j] != 0 for i in range(spec.n)) or \
            any(spec.C[i, j] != 0 for i in range(spec.k))
        if column_used:
            copies[j] = table.fresh(f'x{j + 1}')
            emit(copies[j], ((state, 1),))

    def terms(mats, i):
        # (prefix, column, coefficient, variable) for every nonzero entry of row i
        out = []
        for prefix, mat, names in mats:
            for j in range(mat.cols):
                c = mat[i, j]
                if c != 0:
                    out.append((prefix, j, c, names[j]))
        return out

    def gains(row, i):
        # a multi-term row keeps unit coefficients and names a temp per other term
        if len(row) < 2:
            return [(v, c) for _, _, c, v in row]
        sums = []
        for prefix, j, c, v in row:
            if c in (1, -1):
                sums.append((v, c))
            else:
                name = table.fresh(_gain_name(prefix, i, j))
                emit(name, ((v, c),))
                sums.append((name, Fraction(1)))
        return sums

    states = [copies.get(j) for j in range(spec.n)]
    for i, out in enumerate(spec.output_names):
        row = terms((('C', spec.C, states), ('D', spec.D, spec.input_names)), i)
        emit(out, gains(row, i), temp=False)

    sums = [gains(terms((('A', spec.A, states), ('B', spec.B, spec.input_names)), i), i)
            for i in range(spec.n)]
    for state, coeffs in zip(spec.state_names, sums):
        emit(state, coeffs, temp=False)

    program = StraightLineProgram(spec.name, spec.io_inputs, spec.output_names,
                                  spec.state_names, temps, stmts, spec.x0)
    logger.info(f'Lowered {spec.name} to {len(stmts)} statements and {len(temps)} temps')
    return program


def interpret(program, inputs, state):
    """
    Exact run of the loop body.

    Parameters
    ----------
    program: StraightLineProgram
    inputs: sequence or dict
        Values of ``program.input_vars``
    state: sequence or dict
        Values of ``program.state_vars``

    Returns
    -------
    tuple
        (outputs, new state), tuples of Fractions
    """
    env = {}
    for names, values, what in ((program.input_vars, inputs, 'input'),
                                (program.state_vars, state, 'state')):
        if isinstance(values, dict):
            missing = [v for v in names if v not in values]
            if missing:
                raise InterpretError(f'Missing {what} value(s) for {missing}')
            values = [values[v] for v in names]
        values = list(values)
        if len(values) != len(names):
            raise InterpretError(f'Expected {len(names)} {what} value(s), got {len(values)}')
        env.update(zip(names, (to_rational(v) for v in values)))

    for stmt in program.stmts:
        env[stmt.lhs] = stmt.evaluate(env)
    return tuple(env[v] for v in program.output_vars), tuple(env[v] for v in program.state_vars)


# ------------------ C emission --------------------


def render_c_scalar(value):
    """C literal: a decimal when one exists, else '(N.0/D.0)'."""
    r = to_rational(value)
    text = render_decimal(r)
    if text is None:
        sign = '-' if r < 0 else ''
        text = f'{sign}({abs(r.numerator)}.0/{r.denominator}.0)'
    return text


def render_acsl_scalar(value):
    """ACSL literal: a decimal when one exists, else '(num/den)'."""
    return render_rational(value)


def _reciprocal(lam):
    # 1/lambda as printed in block_m, e.g. (1/0.9991)
    inv = 1 / to_rational(lam)
    text = render_decimal(inv)
    if text is None:
        den = render_decimal(lam)
        text = f'(1/{den})' if den is not None else render_rational(inv)
    return text


class CEmitter:
    """
    Renders a program and its annotations as C.

    ``fraction_literals`` lists, after ``emit``, the logic matrices whose
    literal needed a '(num/den)' entry.
    """

    def __init__(self, program, annotations=None):
        if annotations is not None and annotations.program != program:
            raise ValueError('Annotations belong to a different program')
        self.program = program
        self.annotations = annotations
        self.fraction_literals = []
        self._defs = []
        self._names = {}

    # ----- variables --------
    def var(self, name):
        kind = self.program.kind_of(name)
        if kind == 'state':
            return f'{STATE_PTR}->{name}'
        if kind in ('input', 'output'):
            return f'{IO_PTR}->{name}'
        return name

    def vector(self, support):
        return f'vect_of_{len(support)}_scalar({",".join(self.var(v) for v in support)})'

    # ----- matrices --------
    def literal(self, m):
        m = RationalMatrix(m)
        entries = [render_acsl_scalar(v) for row in m.tolist() for v in row]
        return f'mat_of_{m.rows}x{m.cols}_scalar({",".join(entries)})', \
            any('/' in e for e in entries)

    def define(self, ellipsoid, expression=None, key=None):
        """Name (and define) a logic matrix; equal ellipsoids share a name."""
        key = ellipsoid if key is None else key
        if key in self._names:
            return self._names[key]
        name = f'QMat_{len(self._defs)}'
        if expression is None:
            expression, fractions = self.literal(ellipsoid.matrix)
            if fractions:
                self.fraction_literals.append(name)
        self._defs.append(f'/*@ logic matrix {name} = {expression}; */')
        self._names[key] = name
        return name

    def post_expression(self, triple):
        record = triple.record
        if record is None or record.constant != 0:
            return None
        if record.rule == SPROCEDURE:
            k = len(triple.pre)
            blocks = []
            for i, pre_i in enumerate(triple.pre):
                for j, pre_j in enumerate(triple.pre):
                    if i == j:
                        blocks.append(f'mat_scalar_mult({_reciprocal(record.multipliers[i])},'
                                      f'{self._names[pre_i]})')
                    else:
                        blocks.append(f'zeros({pre_i.dim},{pre_j.dim})')
            assert len(blocks) == k * k
            return f'block_m({",".join(blocks)})'
        t, _ = self.literal(record.T)
        return f'mat_mult(mat_mult({t},{self._names[triple.pre[0]]}),transpose({t}))'

    # ----- text --------
    def predicate(self, name, support):
        return f'in_ellipsoidQ({name},{self.vector(support)})'

    def statement(self, stmt):
        parts = []
        for v, c in stmt.coeffs:
            mag = '' if abs(c) == 1 else f'{render_c_scalar(abs(c))} * '
            sign = '-' if c < 0 else '+'
            parts.append((sign, f'{mag}{self.var(v)}'))
        if stmt.constant != 0 or not parts:
            c = stmt.constant
            parts.append(('-' if c < 0 else '+', render_c_scalar(abs(c))))
        first_sign, first = parts[0]
        text = f'-{first}' if first_sign == '-' else first
        for sign, term in parts[1:]:
            text += f' {sign} {term}'
        return f'{self.var(stmt.lhs)} = {text};'

    def behavior(self, triple):
        lines = [f'  /*@ behavior {triple.label}:']
        for pre, assumed in zip(triple.pre, triple.assumed):
            keyword = 'assumes' if assumed else 'requires'
            lines.append(f'    @ {keyword} {self.predicate(self._names[pre], pre.support)};')
        lines.append(f'    @ ensures {self.predicate(self._names[triple.post], triple.post.support)};')
        lines.append(f'    @ PROOF_TACTIC (use_strategy ({triple.tactic}));')
        lines.append('    @*/')
        return lines

    def emit(self):
        p = self.program
        a = self.annotations
        self.fraction_literals = []
        self._defs = []
        self._names = {}

        contract = []
        if a is not None:
            pre = self.define(a.contract.pre, key=('contract', 'pre'))
            post = self.define(a.contract.post, key=('contract', 'post'))
            self.define(a.body_pre)
            contract = [f'/*@ requires {self.predicate(pre, a.contract.pre.support)};',
                        '  @ requires \\valid(_io_) && \\valid(_state_);',
                        f'  @ ensures {self.predicate(post, a.contract.post.support)};',
                        '  @*/']

        body = []
        emitted = 0

        def flush(upto):
            nonlocal emitted
            while emitted < upto:
                body.extend(['  {', f'    {self.statement(p.stmts[emitted])}', '  }'])
                emitted += 1

        for triple in (a.triples if a is not None else ()):
            flush(triple.position)
            for pre in triple.pre:
                self.define(pre)
            expr = self.post_expression(triple)
            self.define(triple.post, expression=expr)
            body.extend(self.behavior(triple))
            if triple.stmt_index is None:
                body.extend(['  {', '  }'])
            else:
                body.extend(['  {', f'    {self.statement(p.stmts[triple.stmt_index])}', '  }'])
                emitted += 1
        flush(len(p.stmts))

        lines = [f'/* {p.name}: generated by pycredible {__version__} */', '']
        if self._defs:
            lines.extend(self._defs + [''])
        for struct, fields in ((f't_{p.name}_io', p.io_vars), (f't_{p.name}_state', p.state_vars)):
            lines.append('typedef struct {')
            lines.extend(f'  double {v};' for v in fields)
            lines.extend([f'}} {struct};', ''])

        lines.append(f'void {p.name}_init(t_{p.name}_state *{STATE_PTR}) {{')
        lines.extend(f'  {STATE_PTR}->{v} = {render_c_scalar(x)};'
                     for v, x in zip(p.state_vars, p.x0))
        lines.extend(['}', ''])

        lines.extend(contract)
        lines.append(f'void {p.name}_compute(t_{p.name}_io *{IO_PTR}, '
                     f't_{p.name}_state *{STATE_PTR}) {{')
        lines.extend(f'  double {v};' for v in p.temps)
        lines.extend(body)
        lines.append('}')

        if self.fraction_literals:
            logger.warning(f'Matrices rendered with fraction literals: '
                           f'{", ".join(self.fraction_literals)}')
        logger.info(f'Emitted {p.name}: {len(p.stmts)} statements, {len(self._defs)} matrices')
        return '\n'.join(lines) + '\n'


def emit_c(program, annotations=None):
    """
    C source of the program; ``annotations`` (an AnnotatedProgram, usually
    propagated) adds the logic matrices, the function contract and one
    ``behavior`` per Hoare triple. Output is deterministic.
    """
    return CEmitter(program, annotations).emit()
