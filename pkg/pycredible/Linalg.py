"""
Exact rational matrix algebra and positive semidefiniteness decisions.

Scalars are ``fractions.Fraction`` values held in numpy object arrays, so
sums and products never round. Two PSD procedures are provided: an exact
LDL^T factorization with symmetric pivoting for rational data, and a
Cholesky factorization run in outward-rounded interval arithmetic for
float data.
"""

# Python
import re
import math
import logging
from fractions import Fraction
from dataclasses import dataclass
from typing import Optional, Tuple

# External
import numpy as np


__all__ = ['DecimalParseError', 'DimensionError', 'NotSymmetricError', 'SingularMatrixError',
           'PROVEN_PSD', 'PROVEN_NOT_PSD', 'UNKNOWN', 'DEFAULT_SHIFT',
           'parse_decimal', 'to_rational', 'render_decimal', 'render_rational', 'render_float',
           'RationalMatrix', 'PsdVerdict',
           'add', 'multiply', 'transpose', 'block_diag', 'block_matrix', 'scalar_mult',
           'extract_submatrix',
           'quadratic_form', 'ldlt_psd', 'interval_cholesky_psd', 'interval_enclosure',
           'interval_cholesky_rational', 'invert']


logger = logging.getLogger(__name__)

PROVEN_PSD = 'ProvenPSD'
PROVEN_NOT_PSD = 'ProvenNotPSD'
UNKNOWN = 'Unknown'

# shift applied by interval_cholesky_psd when the caller gives none
DEFAULT_SHIFT = 2.0 ** -30

# longest significand rendered as a plain decimal
_MAX_SIGNIFICANT_DIGITS = 17

# greedy prefix: its end is the offset of the first offending character
_DECIMAL_PREFIX = re.compile(r'[+-]?(?:\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)?')
_DECIMAL_PAT = re.compile(r'([+-]?)(\d+)(?:\.(\d*))?(?:[eE]([+-]?\d+))?\Z')


class DecimalParseError(ValueError):
    def __init__(self, text, offset):
        self.text = text
        self.offset = offset
        super().__init__(f'Malformed decimal literal {text!r} at offset {offset}')


class DimensionError(ValueError):
    pass


class NotSymmetricError(ValueError):
    pass


class SingularMatrixError(ValueError):
    pass


# ------------------ scalars --------------------


def parse_decimal(text):
    """
    Parses a decimal literal into an exact rational.

    Parameters
    ----------
    text: str
        Optional sign, digits, optional fraction and optional exponent,
        e.g. '564.48', '-0.05' or '6.742e-4'

    Returns
    -------
    Fraction
        The exact value, in lowest terms

    Raises
    ------
    DecimalParseError
        Naming the offset of the first character that breaks the grammar
    """
    if not isinstance(text, str):
        raise TypeError(f'Expected str, got {text.__class__.__name__}')

    lead = len(text) - len(text.lstrip())
    body = text.strip()
    mo = _DECIMAL_PAT.match(body)
    if mo is None:
        offset = _DECIMAL_PREFIX.match(body).end()
        raise DecimalParseError(text, lead + offset)

    sign, whole, frac, exp = mo.groups()
    frac = frac or ''
    value = Fraction(int(whole + frac), 10 ** len(frac))
    if exp:
        value *= Fraction(10) ** int(exp)
    return -value if sign == '-' else value


def to_rational(value):
    """
    Exact conversion of ints, floats (their binary value), decimal strings,
    'num/den' strings and Fractions.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (bool, np.bool_)):
        raise TypeError(f'Expected a number, got {value.__class__.__name__}')
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError(f'Non-finite value {value} has no rational counterpart')
        return Fraction(float(value))
    if isinstance(value, str):
        if '/' in value:
            num, _, den = value.partition('/')
            den = parse_decimal(den)
            if den == 0:
                raise ZeroDivisionError(f'Zero denominator in {value!r}')
            return parse_decimal(num) / den
        return parse_decimal(value)
    raise TypeError(f'Expected a number or a decimal string, got {value.__class__.__name__}')


def render_decimal(value):
    """
    Shortest decimal string that parses back to ``value`` exactly, or None
    when the expansion does not terminate or needs more than 17 significant
    digits. Integers keep a trailing '.0'.
    """
    r = to_rational(value)
    den = r.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return None

    places = max(twos, fives)
    scaled = abs(r.numerator) * (10 ** places // r.denominator)
    digits = str(scaled)
    if len(digits.rstrip('0')) > _MAX_SIGNIFICANT_DIGITS:
        return None

    if places == 0:
        text = f'{digits}.0'
    else:
        digits = digits.rjust(places + 1, '0')
        text = f'{digits[:-places]}.{digits[-places:]}'
    return f'-{text}' if r < 0 else text


def render_rational(value):
    """Decimal rendering when one exists, else the literal '(num/den)'."""
    r = to_rational(value)
    text = render_decimal(r)
    if text is None:
        text = f'({r.numerator}/{r.denominator})'
    return text


def render_float(value):
    """Shortest round-trip rendering of the double nearest to ``value``."""
    return repr(float(to_rational(value)))


# ------------------ matrices --------------------


class RationalMatrix:
    """
    Immutable matrix of exact rationals.

    Parameters
    ----------
    rows: array_like
        Nested sequence (or 2-D array) of anything ``to_rational`` accepts.
        A ``RationalMatrix`` is returned as is.
    """
    __slots__ = ('_data',)

    def __new__(cls, rows):
        if isinstance(rows, RationalMatrix):
            return rows
        return super().__new__(cls)

    def __init__(self, rows):
        if rows is self:
            return
        try:
            arr = np.array(rows, dtype=object)
        except ValueError as exc:
            raise DimensionError(f'Ragged matrix rows: {exc}') from None
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise DimensionError(f'Expected a 2-D matrix, got {arr.ndim} dimension(s)')

        data = np.empty(arr.shape, dtype=object)
        for idx, value in np.ndenumerate(arr):
            data[idx] = to_rational(value)
        data.flags.writeable = False
        self._data = data

    @classmethod
    def _wrap(cls, arr):
        # numpy can hand back plain ints (e.g. an empty dot product)
        obj = super().__new__(cls)
        data = np.empty(arr.shape, dtype=object)
        for idx, value in np.ndenumerate(arr):
            data[idx] = value if isinstance(value, Fraction) else to_rational(value)
        data.flags.writeable = False
        obj._data = data
        return obj

    @classmethod
    def identity(cls, n):
        arr = np.full((n, n), Fraction(0), dtype=object)
        for i in range(n):
            arr[i, i] = Fraction(1)
        return cls._wrap(arr)

    @classmethod
    def zeros(cls, rows, cols):
        return cls._wrap(np.full((rows, cols), Fraction(0), dtype=object))

    @classmethod
    def diag(cls, values):
        values = [to_rational(v) for v in values]
        arr = np.full((len(values), len(values)), Fraction(0), dtype=object)
        for i, v in enumerate(values):
            arr[i, i] = v
        return cls._wrap(arr)

    @classmethod
    def column(cls, values):
        return cls([[v] for v in values])

    @property
    def shape(self):
        return self._data.shape

    @property
    def rows(self):
        return self._data.shape[0]

    @property
    def cols(self):
        return self._data.shape[1]

    @property
    def is_square(self):
        return self.rows == self.cols

    @property
    def T(self):
        return transpose(self)

    def is_symmetric(self):
        return self.is_square and bool(np.all(self._data == self._data.T))

    def is_zero(self):
        return bool(np.all(self._data == 0))

    def to_array(self):
        """Writeable object-array copy."""
        return self._data.copy()

    def to_float(self):
        return self._data.astype(float)

    def tolist(self):
        return self._data.tolist()

    def __getitem__(self, idx):
        value = self._data[idx]
        if isinstance(value, np.ndarray):
            return RationalMatrix._wrap(np.atleast_2d(value))
        return value

    # ----- arithmetic --------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scalar_mult(-1, other))

    def __neg__(self):
        return scalar_mult(-1, self)

    def __matmul__(self, other):
        return multiply(self, other)

    def __mul__(self, scalar):
        return scalar_mult(scalar, self)

    __rmul__ = __mul__

    # ----- comparison --------
    def __eq__(self, other):
        if not isinstance(other, RationalMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.all(self._data == other._data))

    def __hash__(self):
        return hash((self.shape, tuple(self._data.flat)))

    def __repr__(self):
        body = ', '.join('[' + ', '.join(str(v) for v in row) + ']' for row in self._data)
        return f'<RationalMatrix {self.rows}x{self.cols} [{body}]>'


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f'Cannot {op} matrices of shapes {a.shape} and {b.shape}')


def add(a, b):
    a, b = RationalMatrix(a), RationalMatrix(b)
    _check_same_shape(a, b, 'add')
    return RationalMatrix._wrap(a._data + b._data)


def multiply(a, b):
    a, b = RationalMatrix(a), RationalMatrix(b)
    if a.cols != b.rows:
        raise DimensionError(f'Cannot multiply matrices of shapes {a.shape} and {b.shape}')
    if a.cols == 0:
        return RationalMatrix.zeros(a.rows, b.cols)
    return RationalMatrix._wrap(np.dot(a._data, b._data))


def transpose(a):
    a = RationalMatrix(a)
    return RationalMatrix._wrap(a._data.T)


def scalar_mult(scalar, a):
    a = RationalMatrix(a)
    return RationalMatrix._wrap(a._data * to_rational(scalar))


def block_diag(*blocks):
    """Places the blocks on the diagonal, zeros elsewhere."""
    blocks = [RationalMatrix(b) for b in blocks]
    rows = sum(b.rows for b in blocks)
    cols = sum(b.cols for b in blocks)
    arr = np.full((rows, cols), Fraction(0), dtype=object)
    r = c = 0
    for b in blocks:
        arr[r:r + b.rows, c:c + b.cols] = b._data
        r += b.rows
        c += b.cols
    return RationalMatrix._wrap(arr)


def block_matrix(grid):
    """
    Assembles a matrix from a grid (list of rows) of blocks. Blocks in a
    grid row share their height, blocks in a grid column share their width.
    """
    grid = [[RationalMatrix(b) for b in row] for row in grid]
    if not grid or len({len(row) for row in grid}) != 1:
        raise DimensionError('Block grid must be a non-empty rectangle')
    for i, row in enumerate(grid):
        if len({b.rows for b in row}) != 1:
            raise DimensionError(f'Blocks in grid row {i} have heights {[b.rows for b in row]}')
    for j in range(len(grid[0])):
        widths = [row[j].cols for row in grid]
        if len(set(widths)) != 1:
            raise DimensionError(f'Blocks in grid column {j} have widths {widths}')
    strips = [np.concatenate([b._data for b in row], axis=1) for row in grid]
    return RationalMatrix._wrap(np.concatenate(strips, axis=0))


def extract_submatrix(a, rows, cols):
    """Rows and columns picked by index, in the order given."""
    a = RationalMatrix(a)
    rows, cols = list(rows), list(cols)
    for idx, limit, what in ((rows, a.rows, 'row'), (cols, a.cols, 'column')):
        bad = [i for i in idx if not 0 <= i < limit]
        if bad:
            raise DimensionError(f'{what} indices {bad} out of range for shape {a.shape}')
    return RationalMatrix._wrap(a._data[np.ix_(rows, cols)])


def quadratic_form(m, v):
    """Exact v^T M v."""
    m = RationalMatrix(m)
    v = [to_rational(x) for x in v]
    if not m.is_square or m.rows != len(v):
        raise DimensionError(f'Cannot evaluate a {m.shape} form at a {len(v)}-vector')
    col = np.array(v, dtype=object)
    if not v:
        return Fraction(0)
    return to_rational(np.dot(col, np.dot(m._data, col)))


# ------------------ PSD decisions --------------------


@dataclass(frozen=True)
class PsdVerdict:
    """
    Outcome of a PSD decision.

    ``margin`` is the smallest pivot when the matrix is proven PSD and the
    (negative) quadratic form at ``witness`` when it is proven not PSD.
    """
    status: str
    witness: Optional[Tuple[Fraction, ...]] = None
    margin: Optional[Fraction] = None
    detail: str = ''

    def __post_init__(self):
        if self.status not in {PROVEN_PSD, PROVEN_NOT_PSD, UNKNOWN}:
            raise ValueError(f'Invalid PSD status: {self.status}')
        if self.status == PROVEN_NOT_PSD and self.witness is None:
            raise ValueError('A ProvenNotPSD verdict needs a witness')

    @property
    def proven(self):
        return self.status == PROVEN_PSD

    def to_dict(self):
        return {'verdict': self.status,
                'margin': None if self.margin is None else str(self.margin),
                'margin_float': None if self.margin is None else float(self.margin),
                'witness': None if self.witness is None else [str(w) for w in self.witness],
                'detail': self.detail}


def _check_symmetric(m):
    if not m.is_square:
        raise DimensionError(f'Expected a square matrix, got shape {m.shape}')
    if not m.is_symmetric():
        raise NotSymmetricError(f'Matrix is not symmetric: {m!r}')


def _ldlt_witness(n, steps, tail):
    """
    Lifts a vector over the uneliminated indices back to the original
    coordinates, choosing each eliminated entry so its square term vanishes.
    """
    x = [Fraction(0)] * n
    for i, v in tail.items():
        x[i] = v
    for pivot, row in reversed(steps):
        x[pivot] = -sum((l * x[j] for j, l in row.items()), Fraction(0))
    return tuple(x)


def _not_psd(m, witness, detail):
    value = quadratic_form(m, witness)
    assert value < 0, 'LDLT witness does not refute PSD'
    return PsdVerdict(PROVEN_NOT_PSD, witness=witness, margin=value, detail=detail)


def ldlt_psd(m):
    """
    Exact PSD decision by LDL^T factorization with symmetric pivoting.

    At each step the largest remaining diagonal entry is the pivot. A
    negative pivot, or an all-zero remaining diagonal with a nonzero
    off-diagonal entry, refutes PSD and yields a witness v with
    v^T M v < 0. A remaining block that is entirely zero counts as PSD.

    Parameters
    ----------
    m: RationalMatrix or array_like
        Symmetric matrix

    Returns
    -------
    PsdVerdict
        Never Unknown
    """
    m = RationalMatrix(m)
    _check_symmetric(m)
    n = m.rows
    if n == 0:
        return PsdVerdict(PROVEN_PSD, detail='empty matrix')

    work = m.to_array()
    remaining = list(range(n))
    steps = []
    pivots = []
    while remaining:
        # largest diagonal entry, lowest index on ties
        pivot = max(remaining, key=lambda i: (work[i, i], -i))
        d = work[pivot, pivot]
        if d < 0:
            witness = _ldlt_witness(n, steps, {pivot: Fraction(1)})
            return _not_psd(m, witness, f'negative pivot {d} at index {pivot}')
        if d == 0:
            for i in remaining:
                for j in remaining:
                    b = work[i, j]
                    if b != 0:
                        sign = Fraction(1) if b > 0 else Fraction(-1)
                        witness = _ldlt_witness(n, steps, {i: Fraction(1), j: -sign})
                        return _not_psd(m, witness,
                                        f'zero pivot with nonzero residual entry ({i}, {j})')
            pivots.extend([Fraction(0)] * len(remaining))
            break

        remaining.remove(pivot)
        steps.append((pivot, {j: work[pivot, j] / d for j in remaining}))
        pivots.append(d)
        if remaining:
            idx = np.array(remaining)
            work[np.ix_(idx, idx)] -= np.outer(work[idx, pivot], work[pivot, idx]) / d

    return PsdVerdict(PROVEN_PSD, margin=min(pivots), detail=f'{n} pivots, all nonnegative')


# interval helpers: every result encloses the exact real result
def _down(x):
    return math.nextafter(x, -math.inf)


def _up(x):
    return math.nextafter(x, math.inf)


def _isub(a, b):
    return _down(a[0] - b[1]), _up(a[1] - b[0])


def _imul(a, b):
    products = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return _down(min(products)), _up(max(products))


def _isquare(a):
    lo, hi = a
    if lo >= 0:
        return _down(lo * lo), _up(hi * hi)
    if hi <= 0:
        return _down(hi * hi), _up(lo * lo)
    return 0.0, _up(max(lo * lo, hi * hi))


def _idiv_positive(a, b):
    quotients = (a[0] / b[0], a[0] / b[1], a[1] / b[0], a[1] / b[1])
    return _down(min(quotients)), _up(max(quotients))


def _isqrt(a):
    return _down(math.sqrt(a[0])), _up(math.sqrt(a[1]))


def _interval_cholesky(lo, hi, shift, exact=None):
    """
    Cholesky of the interval matrix [lo, hi] minus shift*I.

    ``exact`` is the rational matrix the intervals enclose, used to confirm a
    refutation witness; without it a failed factorization is Unknown.
    """
    n = lo.shape[0]
    low = [[None] * n for _ in range(n)]
    pivots = []
    for j in range(n):
        s = _isub((lo[j, j], hi[j, j]), (shift, shift))
        for k in range(j):
            s = _isub(s, _isquare(low[j][k]))
        if not s[0] > 0:
            return _interval_failure(exact, shift, j, s)
        d = _isqrt(s)
        low[j][j] = d
        pivots.append(s[0])
        for i in range(j + 1, n):
            t = (lo[i, j], hi[i, j])
            for k in range(j):
                t = _isub(t, _imul(low[i][k], low[j][k]))
            low[i][j] = _idiv_positive(t, d)

    margin = Fraction(min(pivots)) if pivots else None
    return PsdVerdict(PROVEN_PSD, margin=margin,
                      detail=f'interval Cholesky succeeded with shift {shift!r}')


def _interval_failure(exact, shift, index, pivot):
    detail = f'interval pivot {index} not certified positive: [{pivot[0]!r}, {pivot[1]!r}]'
    if exact is None or exact.rows == 0:
        logger.warning(detail)
        return PsdVerdict(UNKNOWN, detail=detail)

    # eigenvector of the smallest eigenvalue as a candidate, confirmed exactly
    shifted = exact - RationalMatrix.identity(exact.rows) * to_rational(shift)
    w, vecs = np.linalg.eigh(shifted.to_float())
    candidate = tuple(to_rational(float(x)) for x in vecs[:, int(np.argmin(w))])
    value = quadratic_form(shifted, candidate)
    if value < 0:
        return PsdVerdict(PROVEN_NOT_PSD, witness=candidate, margin=value,
                          detail=f'{detail}; shifted matrix refuted exactly')
    logger.warning(detail)
    return PsdVerdict(UNKNOWN, detail=detail)


def interval_cholesky_psd(m, shift=DEFAULT_SHIFT):
    """
    Rigorous PSD test for float matrices.

    The Cholesky factorization of M - shift*I runs in interval arithmetic
    with outward rounding (``math.nextafter``). Success proves
    M - shift*I is positive definite, hence M is PSD. On failure an
    eigenvector candidate is checked exactly against the rational lift of
    M - shift*I; if it refutes, the verdict is ProvenNotPSD (for the shifted
    matrix), otherwise Unknown.

    Parameters
    ----------
    m: array_like
        Symmetric float matrix
    shift: float
        Nonnegative diagonal shift

    Returns
    -------
    PsdVerdict
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f'Expected a square matrix, got shape {a.shape}')
    if not np.all(np.isfinite(a)):
        raise ValueError('Matrix has NaN or infinite entries')
    shift = float(shift)
    if not (math.isfinite(shift) and shift >= 0):
        raise ValueError(f'Shift must be a finite nonnegative float, got {shift}')
    if not np.array_equal(a, a.T):
        raise NotSymmetricError('Float matrix is not symmetric')

    return _interval_cholesky(a, a, shift, exact=RationalMatrix(a))


def interval_enclosure(m):
    """Float interval bounds [lo, hi] enclosing each entry of a rational matrix."""
    m = RationalMatrix(m)
    lo = np.empty(m.shape)
    hi = np.empty(m.shape)
    for idx, value in np.ndenumerate(m._data):
        f = float(value)
        lo[idx] = f if Fraction(f) <= value else _down(f)
        hi[idx] = f if Fraction(f) >= value else _up(f)
    return lo, hi


def interval_cholesky_rational(m, shift=DEFAULT_SHIFT):
    """Interval Cholesky run on the float enclosure of a rational matrix."""
    m = RationalMatrix(m)
    _check_symmetric(m)
    lo, hi = interval_enclosure(m)
    return _interval_cholesky(lo, hi, float(shift), exact=m)


def invert(m):
    """
    Exact inverse by Gauss-Jordan elimination.

    Raises
    ------
    SingularMatrixError
        When the exact determinant is zero
    """
    m = RationalMatrix(m)
    if not m.is_square:
        raise DimensionError(f'Cannot invert a non-square matrix of shape {m.shape}')
    n = m.rows
    work = np.concatenate([m.to_array(), RationalMatrix.identity(n).to_array()], axis=1)
    for col in range(n):
        pivot = next((r for r in range(col, n) if work[r, col] != 0), None)
        if pivot is None:
            raise SingularMatrixError(f'Matrix is singular (no pivot in column {col})')
        if pivot != col:
            work[[col, pivot]] = work[[pivot, col]]
        work[col] = work[col] / work[col, col]
        for r in range(n):
            if r != col and work[r, col] != 0:
                work[r] = work[r] - work[r, col] * work[col]
    return RationalMatrix._wrap(work[:, n:])
