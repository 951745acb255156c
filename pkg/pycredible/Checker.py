"""
Independent checker for annotated controller code.

Reads the C text (never the generator's data), rebuilds every statement
and logic matrix exactly, then rechecks each Hoare triple from the
statement alone:

    AffineEllipsoid   M Q_pre M^T == Q_post, M rebuilt from the statement
                      and the two vectors (containment as fallback)
    SProcedure        Q_post == blockdiag(Q_i / l_i) with l_i > 0, sum(l) = 1

and finally decides whether the generated postcondition lies in the
declared one. The accepted grammar is in docs/acsl_grammar.md.
"""

# Python
import re
import json
import logging
from fractions import Fraction
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Optional, Tuple

# External
import numpy as np

# Project
from pycredible._version import __version__
from pycredible.Linalg import (RationalMatrix, PsdVerdict, DimensionError, NotSymmetricError,
                               SingularMatrixError, DecimalParseError, PROVEN_PSD, PROVEN_NOT_PSD,
                               UNKNOWN, DEFAULT_SHIFT, parse_decimal, block_matrix, invert,
                               ldlt_psd, interval_cholesky_rational, render_float)
from pycredible.Spec import Ellipsoid, Q_FORM, P_FORM, contains
from pycredible.Codegen import (AffineAssignment, StraightLineProgram, AFFINE_ELLIPSOID,
                                REDUCE_ELLIPSOID, SPROCEDURE, TACTICS, STATE_PTR, IO_PTR,
                                DEFAULT_SPLIT)


__all__ = ['GrammarError', 'PROVEN', 'REFUTED', 'Predicate', 'ParsedTriple', 'ParsedBlock',
           'ParsedArtifact', 'TripleVerdict', 'Assumption', 'VerificationReport',
           'parse_annotated_c', 'check_affine_triple', 'check_sproc_triple',
           'check_final_containment', 'check_initial_state', 'check_artifact']


logger = logging.getLogger(__name__)

PROVEN = 'Proven'
REFUTED = 'Refuted'


class GrammarError(ValueError):
    def __init__(self, message, line=0, column=0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f'{line}:{column}: {message}')


# ------------------ lexer --------------------


Token = namedtuple('Token', 'kind text line column')

# order matters: annotation openers before plain comments, '*/' before '*'
_TOKEN_SPEC = [
    ('AOPEN', r'/\*@'),
    (None, r'/\*.*?\*/'),
    (None, r'//[^\n]*'),
    ('ACLOSE', r'\*/'),
    (None, r'[ \t\r\n]+'),
    (None, r'@'),
    ('VALID', r'\\valid'),
    ('ARROW', r'->'),
    ('AND', r'&&'),
    ('NUM', r'\d+(?:\.\d*)?(?:[eE][+-]?\d+)?'),
    ('ID', r'[A-Za-z_][A-Za-z0-9_]*'),
    ('PUNCT', r'[{}();,=*/+\-:]'),
]
_TOKEN_PAT = re.compile('|'.join(f'(?P<T{i}>{pat})' for i, (_, pat) in enumerate(_TOKEN_SPEC)),
                        re.S)

_MAT_LITERAL = re.compile(r'mat_of_(\d+)x(\d+)_scalar\Z')
_VECT = re.compile(r'vect_of_(\d+)_scalar\Z')


def _tokenize(text):
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        mo = _TOKEN_PAT.match(text, pos)
        if mo is None:
            raise GrammarError(f'Unexpected character {text[pos]!r}', line, pos - line_start + 1)
        kind = _TOKEN_SPEC[int(mo.lastgroup[1:])][0]
        if kind is not None:
            yield Token(kind, mo.group(), line, pos - line_start + 1)
        newlines = mo.group().count('\n')
        if newlines:
            line += newlines
            line_start = pos + mo.group().rfind('\n') + 1
        pos = mo.end()


# ------------------ parsed artifact --------------------


@dataclass(frozen=True)
class Predicate:
    """``in_ellipsoidQ(name, vect_of_n_scalar(vars))``; ``matrix`` is always the Q-form."""
    name: str
    variables: Tuple[str, ...]
    matrix: RationalMatrix
    form: str = Q_FORM
    line: int = 0

    def same_set(self, other):
        return self.variables == other.variables and self.matrix == other.matrix


@dataclass(frozen=True)
class ParsedTriple:
    label: str
    pre: Tuple[Predicate, ...]
    assumed: Tuple[bool, ...]
    stmt: Optional[AffineAssignment]
    post: Predicate
    tactic: str
    position: int
    line: int = 0

    @property
    def is_skip(self):
        return self.stmt is None


@dataclass(frozen=True)
class ParsedBlock:
    """A braced block of the compute body with its optional behavior."""
    triple: Optional[ParsedTriple]
    stmt: Optional[AffineAssignment]
    line: int = 0


@dataclass(frozen=True)
class ParsedArtifact:
    program: StraightLineProgram
    matrices: dict
    blocks: Tuple[ParsedBlock, ...]
    contract: Optional[Tuple[Predicate, Predicate]] = None
    has_init: bool = False

    @property
    def triples(self):
        return tuple(b.triple for b in self.blocks if b.triple is not None)


# ------------------ parser --------------------


class _Parser:
    """Recursive descent over the emitted C/ACSL subset."""

    def __init__(self, text):
        self.tokens = list(_tokenize(text))
        self.pos = 0
        self.matrices = {}
        self.structs = {}
        self.contract = None
        self.init = None
        self.compute = None

    # ----- token helpers --------
    def peek(self, offset=0):
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def error(self, message, tok=None):
        tok = tok or self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else Token(None, '', 1, 0)
            raise GrammarError(f'{message} (at end of input)', last.line,
                               last.column + len(last.text))
        raise GrammarError(message, tok.line, tok.column)

    def accept(self, kind, text=None):
        tok = self.peek()
        if tok is not None and tok.kind == kind and (text is None or tok.text == text):
            self.pos += 1
            return tok
        return None

    def expect(self, kind, text=None):
        tok = self.accept(kind, text)
        if tok is None:
            got = self.peek()
            self.error(f'Expected {text or kind}, got {got.text!r}' if got else
                       f'Expected {text or kind}')
        return tok

    def at(self, kind, text=None, offset=0):
        tok = self.peek(offset)
        return tok is not None and tok.kind == kind and (text is None or tok.text == text)

    # ----- scalars and variables --------
    def number(self):
        tok = self.expect('NUM')
        try:
            return parse_decimal(tok.text)
        except DecimalParseError as exc:
            self.error(str(exc), tok)

    def scalar(self):
        negative = bool(self.accept('PUNCT', '-'))
        if self.accept('PUNCT', '('):
            num_negative = bool(self.accept('PUNCT', '-'))
            num = self.number()
            self.expect('PUNCT', '/')
            tok = self.peek()
            den = self.number()
            if den == 0:
                self.error('Zero denominator', tok)
            self.expect('PUNCT', ')')
            value = (-num if num_negative else num) / den
        else:
            value = self.number()
        return -value if negative else value

    def variable(self):
        tok = self.expect('ID')
        if self.accept('ARROW'):
            if tok.text not in (STATE_PTR, IO_PTR):
                self.error(f'Unknown struct pointer {tok.text!r}', tok)
            return self.expect('ID').text, tok.text
        return tok.text, None

    # ----- logic matrices --------
    def mexpr(self):
        tok = self.expect('ID')
        name = tok.text
        mo = _MAT_LITERAL.match(name)
        try:
            if mo:
                rows, cols = int(mo.group(1)), int(mo.group(2))
                values = self.arguments(self.scalar)
                if len(values) != rows * cols:
                    self.error(f'{name} takes {rows * cols} entries, got {len(values)}', tok)
                return RationalMatrix([values[r * cols:(r + 1) * cols] for r in range(rows)]) \
                    if rows else RationalMatrix.zeros(0, cols)
            if name == 'mat_mult':
                a, b = self.arguments(self.mexpr, count=2)
                return a @ b
            if name == 'mat_add':
                a, b = self.arguments(self.mexpr, count=2)
                return a + b
            if name == 'transpose':
                (a,) = self.arguments(self.mexpr, count=1)
                return a.T
            if name == 'mat_scalar_mult':
                self.expect('PUNCT', '(')
                s = self.scalar()
                self.expect('PUNCT', ',')
                a = self.mexpr()
                self.expect('PUNCT', ')')
                return a * s
            if name == 'zeros':
                r, c = self.arguments(self.number, count=2)
                if r.denominator != 1 or c.denominator != 1:
                    self.error('zeros takes integer sizes', tok)
                return RationalMatrix.zeros(int(r), int(c))
            if name == 'block_m':
                blocks = self.arguments(self.mexpr)
                k = int(round(len(blocks) ** 0.5))
                if k * k != len(blocks):
                    self.error(f'block_m takes a square number of blocks, got {len(blocks)}', tok)
                return block_matrix([blocks[i * k:(i + 1) * k] for i in range(k)])
        except DimensionError as exc:
            self.error(str(exc), tok)
        if self.at('PUNCT', '('):
            self.error(f'Unknown matrix function {name!r}', tok)
        if name not in self.matrices:
            self.error(f'Undefined matrix {name!r}', tok)
        return self.matrices[name]

    def arguments(self, item, count=None):
        start = self.expect('PUNCT', '(')
        values = [item()]
        while self.accept('PUNCT', ','):
            values.append(item())
        self.expect('PUNCT', ')')
        if count is not None and len(values) != count:
            self.error(f'Expected {count} argument(s), got {len(values)}', start)
        return values

    def definition(self):
        self.expect('ID', 'logic')
        self.expect('ID', 'matrix')
        tok = self.expect('ID')
        if tok.text in self.matrices:
            self.error(f'Matrix {tok.text} defined twice', tok)
        self.expect('PUNCT', '=')
        self.matrices[tok.text] = self.mexpr()
        self.expect('PUNCT', ';')
        self.expect('ACLOSE')

    # ----- predicates --------
    def predicate(self):
        head = self.expect('ID')
        if head.text not in ('in_ellipsoidQ', 'in_ellipsoid'):
            self.error(f'Unknown predicate {head.text!r}', head)
        self.expect('PUNCT', '(')
        mtok = self.expect('ID')
        if mtok.text not in self.matrices:
            self.error(f'Undefined matrix {mtok.text!r}', mtok)
        self.expect('PUNCT', ',')
        vtok = self.expect('ID')
        mo = _VECT.match(vtok.text)
        if mo is None:
            self.error(f'Expected vect_of_<n>_scalar, got {vtok.text!r}', vtok)
        variables = tuple(v for v, _ in self.arguments(self.variable))
        self.expect('PUNCT', ')')

        n = int(mo.group(1))
        matrix = self.matrices[mtok.text]
        if len(variables) != n:
            self.error(f'{vtok.text} lists {len(variables)} variable(s)', vtok)
        if matrix.shape != (n, n):
            self.error(f'{mtok.text} is {matrix.rows}x{matrix.cols}, vector has {n} entries', mtok)
        if len(set(variables)) != n:
            self.error(f'Repeated variables in {vtok.text}', vtok)
        form = Q_FORM
        if head.text == 'in_ellipsoid':
            form = P_FORM
            try:
                matrix = invert(matrix)
            except SingularMatrixError:
                self.error(f'P-form matrix {mtok.text} is singular', mtok)
        return Predicate(mtok.text, variables, matrix, form, head.line)

    # ----- functions --------
    def struct(self):
        self.expect('ID', 'typedef')
        self.expect('ID', 'struct')
        self.expect('PUNCT', '{')
        fields = []
        while self.accept('ID', 'double'):
            fields.append(self.expect('ID').text)
            self.expect('PUNCT', ';')
        self.expect('PUNCT', '}')
        tok = self.expect('ID')
        self.expect('PUNCT', ';')
        if tok.text in self.structs:
            self.error(f'Struct {tok.text} defined twice', tok)
        self.structs[tok.text] = fields

    def contract_clauses(self):
        pre = post = None
        start = self.expect('AOPEN')
        while not self.accept('ACLOSE'):
            if self.accept('ID', 'requires'):
                if self.accept('VALID'):
                    self.arguments(self.variable)
                    self.expect('AND')
                    self.expect('VALID')
                    self.arguments(self.variable)
                elif pre is None:
                    pre = self.predicate()
                else:
                    self.error('Contract has more than one ellipsoid precondition')
            elif self.accept('ID', 'ensures'):
                if post is not None:
                    self.error('Contract has more than one postcondition')
                post = self.predicate()
            else:
                self.error('Expected requires or ensures')
            self.expect('PUNCT', ';')
        if pre is None or post is None:
            self.error('Contract needs an ellipsoid requires and ensures', start)
        return pre, post

    def function(self, contract=None):
        self.expect('ID', 'void')
        tok = self.expect('ID')
        self.expect('PUNCT', '(')
        while not self.accept('PUNCT', ')'):
            self.expect('ID')
            self.expect('PUNCT', '*')
            self.expect('ID')
            self.accept('PUNCT', ',')
        self.expect('PUNCT', '{')
        if tok.text.endswith('_init') and contract is None:
            if self.init is not None:
                self.error('Init function defined twice', tok)
            self.init = self.init_body()
        elif tok.text.endswith('_compute'):
            if self.compute is not None:
                self.error('Compute function defined twice', tok)
            self.contract = contract
            self.compute = (tok.text[:-len('_compute')], tok) + self.compute_body()
        else:
            self.error(f'Unexpected function {tok.text!r}', tok)

    def init_body(self):
        values = {}
        while not self.accept('PUNCT', '}'):
            name, _ = self.variable()
            self.expect('PUNCT', '=')
            values[name] = self.scalar()
            self.expect('PUNCT', ';')
        return values

    def statement(self):
        start = self.peek()
        lhs, _ = self.variable()
        self.expect('PUNCT', '=')
        coeffs = {}
        constant = Fraction(0)
        sign = -1 if self.accept('PUNCT', '-') else 1
        while True:
            if self.at('NUM') or self.at('PUNCT', '('):
                c = self.scalar()
                var = self.variable()[0] if self.accept('PUNCT', '*') else None
            else:
                c, var = Fraction(1), self.variable()[0]
            if var is None:
                constant += sign * c
            elif var in coeffs:
                self.error(f'{var} appears twice in the assignment to {lhs}', start)
            else:
                coeffs[var] = sign * c
            if self.accept('PUNCT', '+'):
                sign = 1
            elif self.accept('PUNCT', '-'):
                sign = -1
            else:
                break
        self.expect('PUNCT', ';')
        return AffineAssignment(lhs, coeffs, constant)

    def behavior(self, position):
        self.expect('AOPEN')
        start = self.expect('ID', 'behavior')
        label = self.expect('ID').text
        self.expect('PUNCT', ':')
        pres, assumed = [], []
        while self.at('ID', 'assumes') or self.at('ID', 'requires'):
            assumed.append(self.expect('ID').text == 'assumes')
            pres.append(self.predicate())
            self.expect('PUNCT', ';')
        if not pres:
            self.error(f'Behavior {label} has no precondition')
        self.expect('ID', 'ensures')
        post = self.predicate()
        self.expect('PUNCT', ';')
        self.expect('ID', 'PROOF_TACTIC')
        self.expect('PUNCT', '(')
        self.expect('ID', 'use_strategy')
        self.expect('PUNCT', '(')
        tactic = self.expect('ID')
        if tactic.text not in TACTICS:
            self.error(f'Unknown proof tactic {tactic.text!r}', tactic)
        self.expect('PUNCT', ')')
        self.expect('PUNCT', ')')
        self.expect('PUNCT', ';')
        self.expect('ACLOSE')
        return dict(label=label, pre=tuple(pres), assumed=tuple(assumed), post=post,
                    tactic=tactic.text, position=position, line=start.line)

    def compute_body(self):
        temps = []
        while self.accept('ID', 'double'):
            temps.append(self.expect('ID').text)
            self.expect('PUNCT', ';')
        blocks = []
        position = 0
        while not self.accept('PUNCT', '}'):
            header = self.behavior(position) if self.at('AOPEN') else None
            brace = self.expect('PUNCT', '{')
            stmt = None
            if not self.accept('PUNCT', '}'):
                stmt = self.statement()
                self.expect('PUNCT', '}')
                position += 1
            triple = ParsedTriple(stmt=stmt, **header) if header else None
            blocks.append(ParsedBlock(triple, stmt, brace.line))
        return temps, blocks

    def parse(self):
        if not self.tokens:
            raise GrammarError('Empty input', 1, 1)
        while self.peek() is not None:
            if self.at('AOPEN') and self.at('ID', 'logic', offset=1):
                self.accept('AOPEN')
                self.definition()
            elif self.at('AOPEN'):
                contract = self.contract_clauses()
                if not self.at('ID', 'void'):
                    self.error('A contract must precede a function')
                self.function(contract)
            elif self.at('ID', 'typedef'):
                self.struct()
            elif self.at('ID', 'void'):
                self.function()
            else:
                self.error(f'Unexpected {self.peek().text!r}')
        if self.compute is None:
            raise GrammarError('No compute function', 1, 1)
        return self.artifact()

    def artifact(self):
        name, tok, temps, blocks = self.compute
        io = self.structs.get(f't_{name}_io')
        states = self.structs.get(f't_{name}_state')
        if io is None or states is None:
            self.error(f'Missing struct t_{name}_io or t_{name}_state', tok)
        stmts = [b.stmt for b in blocks if b.stmt is not None]
        assigned = {s.lhs for s in stmts}
        init = self.init or {}
        unknown = [v for v in init if v not in states]
        if unknown:
            self.error(f'Init assigns unknown states {unknown}', tok)
        try:
            program = StraightLineProgram(
                name, [v for v in io if v not in assigned], [v for v in io if v in assigned],
                states, temps, stmts, [init.get(v, Fraction(0)) for v in states])
        except ValueError as exc:
            self.error(str(exc), tok)
        return ParsedArtifact(program, dict(self.matrices), tuple(blocks), self.contract,
                              self.init is not None)


def parse_annotated_c(text):
    """
    Parses emitted (or hand-written) annotated C.

    Returns
    -------
    ParsedArtifact

    Raises
    ------
    GrammarError
        With the line and column of the offending token
    """
    artifact = _Parser(text).parse()
    logger.info(f'Parsed {artifact.program.name}: {len(artifact.matrices)} matrices, '
                f'{len(artifact.triples)} triples')
    return artifact


# ------------------ triple checks --------------------


@dataclass(frozen=True)
class TripleVerdict:
    label: str
    rule: str
    verdict: str
    detail: str = ''
    discrepancy: Optional[RationalMatrix] = None
    multipliers: Tuple[Fraction, ...] = ()

    def to_dict(self):
        out = {'label': self.label, 'rule': self.rule, 'verdict': self.verdict,
               'detail': self.detail}
        if self.multipliers:
            out['multipliers'] = [str(m) for m in self.multipliers]
        if self.discrepancy is not None:
            out['discrepancy'] = [[float(v) for v in row] for row in self.discrepancy.tolist()]
        return out


def _localize(diff):
    arr = diff.to_array()
    entries = [(i, j) for (i, j), v in np.ndenumerate(arr) if v != 0]
    shown = ', '.join(f'({i},{j})' for i, j in entries[:4])
    more = f' and {len(entries) - 4} more' if len(entries) > 4 else ''
    return f'{len(entries)} entr{"y" if len(entries) == 1 else "ies"} differ: {shown}{more}'


def _rebuild_m(t):
    """M with y = M x from the statement and the two vectors; a str on mismatch."""
    x, y = t.pre[0].variables, t.post.variables
    stmt = t.stmt
    rows = []
    for var in y:
        if stmt is not None and var == stmt.lhs:
            outside = [v for v in stmt.variables if v not in x]
            if outside:
                return f'{outside} read by {stmt.lhs} are not in the precondition vector'
            rows.append([stmt.coeff(v) for v in x])
        elif var in x:
            rows.append([Fraction(int(v == var)) for v in x])
        else:
            return f'{var} in the postcondition is neither in the precondition nor assigned'
    return RationalMatrix(rows) if rows else RationalMatrix.zeros(0, len(x))


def check_affine_triple(t):
    """
    AffineEllipsoid obligation of one triple, from its own text.

    A Skip triple (empty block) is a projection or reordering; otherwise the
    assigned row is the statement's coefficients and every other row selects
    a precondition variable. A nonzero constant adds c^2 e e^T / (1 - s)
    to M Q M^T / s with the fixed split s.
    """
    rule = REDUCE_ELLIPSOID if t.is_skip else AFFINE_ELLIPSOID
    if t.tactic != AFFINE_ELLIPSOID:
        return TripleVerdict(t.label, rule, REFUTED, f'tactic is {t.tactic}, not AffineEllipsoid')
    if len(t.pre) != 1:
        return TripleVerdict(t.label, rule, REFUTED,
                             f'AffineEllipsoid takes one precondition, got {len(t.pre)}')
    if len(set(t.post.variables)) != len(t.post.variables):
        return TripleVerdict(t.label, rule, REFUTED, 'repeated postcondition variables')

    m = _rebuild_m(t)
    if isinstance(m, str):
        return TripleVerdict(t.label, rule, REFUTED, m)
    expected = m @ t.pre[0].matrix @ m.T
    if t.stmt is not None and t.stmt.constant != 0:
        if t.stmt.lhs not in t.post.variables:
            return TripleVerdict(t.label, rule, REFUTED, f'{t.stmt.lhs} missing from the post')
        e = RationalMatrix.column([int(v == t.stmt.lhs) for v in t.post.variables])
        expected = expected * (1 / DEFAULT_SPLIT) + \
            (e @ e.T) * (t.stmt.constant ** 2 / (1 - DEFAULT_SPLIT))

    if expected == t.post.matrix:
        return TripleVerdict(t.label, rule, PROVEN, 'post equals M Q M^T')

    diff = t.post.matrix - expected
    try:
        verdict = ldlt_psd(diff)
    except NotSymmetricError:
        return TripleVerdict(t.label, rule, REFUTED, 'post matrix is not symmetric', diff)
    if verdict.proven:
        return TripleVerdict(t.label, rule, PROVEN, 'proven by containment')
    return TripleVerdict(t.label, rule, REFUTED, f'post differs from M Q M^T: {_localize(diff)}',
                         diff)


def _block_ratio(post_block, pre_block):
    """s with post_block == s * pre_block, or None."""
    ratio = None
    for (i, j), q in np.ndenumerate(pre_block.to_array()):
        p = post_block[i, j]
        if q == 0:
            if p != 0:
                return None
            continue
        if ratio is None:
            ratio = p / q
        elif p != ratio * q:
            return None
    return ratio


def check_sproc_triple(t):
    """
    SProcedure obligation: the post is block diagonal over the
    concatenated pre vectors, block i being Q_i / l_i, with every l_i
    positive and the l_i summing to exactly 1. A zero Q_i (a single point)
    needs a zero block and takes whatever share the others leave, which must
    then be positive.
    """
    def refuted(detail):
        return TripleVerdict(t.label, SPROCEDURE, REFUTED, detail)

    if t.tactic != SPROCEDURE:
        return refuted(f'tactic is {t.tactic}, not SProcedure')
    if not t.is_skip:
        return refuted('SProcedure applies to an empty block only')
    if len(t.pre) < 2:
        return refuted(f'SProcedure needs at least two preconditions, got {len(t.pre)}')
    concat = tuple(v for p in t.pre for v in p.variables)
    if t.post.variables != concat:
        return refuted(f'post vector {list(t.post.variables)} is not the concatenation '
                       f'{list(concat)}')

    post = t.post.matrix
    offsets = np.cumsum([0] + [len(p.variables) for p in t.pre])
    # None marks a point set (zero Q): its multiplier is free
    lams = []
    for a, pa in enumerate(t.pre):
        ra = range(offsets[a], offsets[a + 1])
        for b in range(len(t.pre)):
            rb = range(offsets[b], offsets[b + 1])
            block = post[ra.start:ra.stop, rb.start:rb.stop] if len(ra) and len(rb) else None
            if block is None:
                continue
            if a != b and not block.is_zero():
                return refuted(f'off-diagonal block ({a},{b}) is not zero')
            if a == b and pa.matrix.is_zero():
                if not block.is_zero():
                    return refuted(f'block {a} over the point set {pa.name} is not zero')
                lams.append(None)
            elif a == b:
                ratio = _block_ratio(block, pa.matrix)
                if ratio is None or ratio == 0:
                    return refuted(f'block {a} is not a multiple of {pa.name}')
                lams.append(1 / ratio)

    known = [lam for lam in lams if lam is not None]
    free = len(lams) - len(known)
    if any(lam <= 0 for lam in known):
        return refuted(f'multipliers {[str(x) for x in known]} are not all positive')
    total = sum(known, Fraction(0))
    if free and total >= 1:
        return TripleVerdict(t.label, SPROCEDURE, REFUTED,
                             f'multipliers sum to {total}, leaving nothing for {free} point '
                             f'set(s)', multipliers=tuple(known))
    if not free and total != 1:
        return TripleVerdict(t.label, SPROCEDURE, REFUTED,
                             f'multipliers sum to {total}, expected 1', multipliers=tuple(known))
    # point sets share what the others leave
    lams = tuple((1 - total) / free if lam is None else lam for lam in lams)
    return TripleVerdict(t.label, SPROCEDURE, PROVEN,
                         f'multipliers ({", ".join(render_float(x) for x in lams)})',
                         multipliers=tuple(lams))


def check_final_containment(q_generated, q_declared, support_generated=None,
                            support_declared=None, shift=0.0):
    """
    Decides {x : Q_gen-form} within {x : Q_decl-form}, i.e. Q_decl - Q_gen PSD.

    Rational data goes through the exact LDL^T test; when either matrix is a
    float array the difference is enclosed in intervals and factored with
    the interval Cholesky (``shift`` then applies).

    Raises
    ------
    ValueError
        On different supports
    """
    if support_generated is not None and support_declared is not None \
            and tuple(support_generated) != tuple(support_declared):
        raise ValueError(f'Support mismatch: {list(support_generated)} vs '
                         f'{list(support_declared)}')
    floats = any(isinstance(q, np.ndarray) and q.dtype.kind == 'f'
                 for q in (q_generated, q_declared))
    gen, decl = RationalMatrix(q_generated), RationalMatrix(q_declared)
    if gen.shape != decl.shape:
        raise DimensionError(f'Cannot compare ellipsoids of shapes {gen.shape} and {decl.shape}')
    if floats:
        return interval_cholesky_rational(decl - gen, shift)
    return ldlt_psd(decl - gen)


def check_initial_state(pre, x0):
    """Proven when the initial state lies in the contract precondition."""
    try:
        e = Ellipsoid(Q_FORM, pre.matrix, pre.variables)
        inside = contains(e, [x0[v] for v in pre.variables])
    except (ValueError, KeyError) as exc:
        return UNKNOWN, f'cannot evaluate the initial state: {exc}'
    if inside:
        return PROVEN, f'x0 lies in {pre.name}'
    return REFUTED, f'x0 lies outside {pre.name}'


# ------------------ artifact --------------------


@dataclass(frozen=True)
class Assumption:
    """An accepted ``assumes`` clause."""
    label: str
    matrix: str
    variables: Tuple[str, ...]

    def to_dict(self):
        return {'label': self.label, 'matrix': self.matrix, 'variables': list(self.variables)}


def _assumption_problem(p, program):
    """Why ``p`` cannot be assumed, or None."""
    states = [v for v in p.variables if v in program.state_vars]
    if states:
        return f'mentions state variable(s) {states}'
    known = set(program.input_vars + program.output_vars + program.temps)
    unknown = [v for v in p.variables if v not in known]
    if unknown:
        return f'unknown variable(s) {unknown}'
    try:
        verdict = ldlt_psd(p.matrix)
    except NotSymmetricError:
        return 'matrix is not symmetric'
    if not verdict.proven:
        return 'matrix is not positive semidefinite'
    return None


@dataclass(frozen=True)
class VerificationReport:
    """
    Outcome of checking one artifact; ``overall`` is Proven only when every
    triple is Proven, the final containment is ProvenPSD and the initial
    state lies in the contract.
    """
    name: str
    triples: Tuple[TripleVerdict, ...]
    final_containment: Optional[PsdVerdict]
    final_detail: str
    initial_state: Tuple[str, str]
    float_check: Optional[PsdVerdict] = None
    epsilon: float = DEFAULT_SHIFT
    lmi_check: Optional[PsdVerdict] = None
    seed: Optional[int] = None
    assumptions: Tuple[Assumption, ...] = ()
    tool_version: str = __version__
    extra: dict = field(default_factory=dict)

    @property
    def overall(self):
        verdicts = [t.verdict for t in self.triples]
        final = self.final_containment.status if self.final_containment else UNKNOWN
        if REFUTED in verdicts or final == PROVEN_NOT_PSD or self.initial_state[0] == REFUTED:
            return REFUTED
        if all(v == PROVEN for v in verdicts) and final == PROVEN_PSD \
                and self.initial_state[0] == PROVEN:
            return PROVEN
        return UNKNOWN

    def counts(self):
        return {v: sum(t.verdict == v for t in self.triples) for v in (PROVEN, REFUTED, UNKNOWN)}

    def to_dict(self):
        final = self.final_containment.to_dict() if self.final_containment else \
            {'verdict': UNKNOWN, 'margin': None, 'margin_float': None, 'witness': None}
        final['detail'] = self.final_detail
        return {
            'name': self.name,
            'overall': self.overall,
            'triples': [t.to_dict() for t in self.triples],
            'counts': self.counts(),
            'final_containment': final,
            'initial_state': {'verdict': self.initial_state[0], 'detail': self.initial_state[1]},
            'assumptions': [a.to_dict() for a in self.assumptions],
            'float_check': self.float_check.to_dict() if self.float_check else None,
            'lmi_check': self.lmi_check.to_dict() if self.lmi_check else None,
            'epsilon': self.epsilon,
            'seed': self.seed,
            'tool_version': self.tool_version,
            **self.extra,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + '\n'


class _Established:
    """Predicates known to hold at the current program point."""

    def __init__(self):
        self.preds = []

    def add(self, pred):
        self.preds.append(pred)

    def holds(self, pred):
        return any(p.same_set(pred) for p in self.preds)

    def invalidate(self, var):
        self.preds = [p for p in self.preds if var not in p.variables]

    def latest_over(self, variables):
        return next((p for p in reversed(self.preds) if p.variables == variables), None)


def _check_triple(t):
    if t.tactic == SPROCEDURE:
        return check_sproc_triple(t)
    return check_affine_triple(t)


def check_artifact(parsed, epsilon=DEFAULT_SHIFT):
    """
    Checks every triple in program order and the final containment.

    The contract precondition holds at body start. An ``assumes`` clause is
    an axiom only over memoryless signals (no state variable) and with a
    PSD matrix; otherwise its triple is Unknown and nothing is assumed. A
    ``requires`` clause must match (same vector, equal matrix) a predicate
    that still holds, otherwise its triple is Unknown. A statement kills the
    predicates mentioning its lhs; the post of a Proven triple then holds.

    Returns
    -------
    VerificationReport
    """
    name = parsed.program.name
    if parsed.contract is None:
        raise GrammarError(f'Compute function of {name} has no contract')
    pre, post = parsed.contract

    held = _Established()
    held.add(pre)
    verdicts, assumptions = [], []
    for block in parsed.blocks:
        t = block.triple
        if t is not None:
            rule = SPROCEDURE if t.tactic == SPROCEDURE else \
                (REDUCE_ELLIPSOID if t.is_skip else AFFINE_ELLIPSOID)
            axioms = [p for p, assumed in zip(t.pre, t.assumed) if assumed]
            rejected = None
            for p in axioms:
                problem = _assumption_problem(p, parsed.program)
                if problem:
                    rejected = (p, problem)
                    break
            if rejected is None:
                for p in axioms:
                    held.add(p)
                    assumptions.append(Assumption(t.label, p.name, p.variables))
            missing = [p for p, assumed in zip(t.pre, t.assumed)
                       if not assumed and not held.holds(p)]
            if rejected is not None:
                verdict = TripleVerdict(t.label, rule, UNKNOWN,
                                        f'assumption {rejected[0].name} rejected: {rejected[1]}')
                logger.warning(f'{t.label}: {verdict.detail}')
            elif missing:
                verdict = TripleVerdict(t.label, rule, UNKNOWN,
                                        f'precondition {missing[0].name} not established '
                                        f'(chain broken before line {t.line})')
                logger.warning(f'{t.label}: {verdict.detail}')
            else:
                verdict = _check_triple(t)
            verdicts.append(verdict)
            logger.debug(f'{t.label}: {verdict.verdict} ({verdict.detail})')
        if block.stmt is not None:
            held.invalidate(block.stmt.lhs)
        if t is not None and verdicts[-1].verdict == PROVEN:
            held.add(t.post)

    generated = held.latest_over(post.variables)
    float_check = None
    if generated is None:
        final, detail = None, f'no established predicate over {list(post.variables)}'
        logger.warning(detail)
    else:
        detail = f'{generated.name} within {post.name}'
        try:
            final = check_final_containment(generated.matrix, post.matrix,
                                            generated.variables, post.variables)
            float_check = interval_cholesky_rational(post.matrix - generated.matrix, epsilon)
        except NotSymmetricError as exc:
            final = PsdVerdict(UNKNOWN, detail=str(exc))
            detail = f'{detail}: {exc}'

    if parsed.has_init:
        x0 = dict(zip(parsed.program.state_vars, parsed.program.x0))
        initial = check_initial_state(pre, x0)
    else:
        initial = (UNKNOWN, 'no init function')

    report = VerificationReport(name, tuple(verdicts), final, detail, initial, float_check,
                                epsilon, assumptions=tuple(assumptions))
    counts = report.counts()
    logger.info(f'Checked {name}: {counts[PROVEN]} proven, {counts[REFUTED]} refuted, '
                f'{counts[UNKNOWN]} unknown triple(s); final '
                f'{final.status if final else UNKNOWN}; overall {report.overall}')
    return report
