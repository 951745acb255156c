"""
Forward propagation of ellipsoid invariants through the loop body.

Every active ellipsoid is held in Q-form, {x : [[1, x^T], [x, Q]] PSD},
which tolerates flat (rank-deficient) sets and never needs an inverse.
Three rules move them along the statements:

    AffineEllipsoid   y := L z      Q' = T Q T^T
    ReduceEllipsoid   forget x_i    Q' = Q without row/column i
    SProcedure        merge         Q' = blockdiag(Q_1 / l_1, ..., Q_k / l_k), sum(l) = 1
"""

# Python
import logging
from fractions import Fraction
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, FrozenSet

# Project
from pycredible.Linalg import RationalMatrix, block_diag, render_float, to_rational
from pycredible.Spec import Ellipsoid, Q_FORM, to_qform
from pycredible.Codegen import AFFINE_ELLIPSOID, REDUCE_ELLIPSOID, SPROCEDURE, DEFAULT_SPLIT
from pycredible.Annotation import HoareTriple


__all__ = ['NotApplicable', 'MultiplierError', 'PropagationError', 'TransformRecord',
           'PropagationState', 'PropagationResult', 'affine_update', 'reduce', 'permute',
           'sproc_combine', 'liveness', 'propagate']


logger = logging.getLogger(__name__)


class NotApplicable(ValueError):
    pass


class MultiplierError(ValueError):
    pass


class PropagationError(ValueError):
    def __init__(self, message, variable=None, stmt_index=None):
        self.variable = variable
        self.stmt_index = stmt_index
        super().__init__(message)


def _exact_str(value):
    return f'{value.numerator}/{value.denominator}' if value.denominator != 1 else str(value)


@dataclass(frozen=True)
class TransformRecord:
    """
    How one post matrix was built from its pre matrices.

    AffineEllipsoid and ReduceEllipsoid carry ``T``; an affine step with a
    nonzero ``constant`` on ``target`` also carries ``split``.
    SProcedure carries ``multipliers``.
    """
    rule: str
    in_supports: Tuple[Tuple[str, ...], ...]
    out_support: Tuple[str, ...]
    T: Optional[RationalMatrix] = None
    multipliers: Tuple[Fraction, ...] = ()
    constant: Fraction = Fraction(0)
    target: Optional[str] = None
    split: Optional[Fraction] = None
    stmt_index: Optional[int] = None

    def apply(self, *pres):
        """Post matrix from the pre matrices, recomputed exactly."""
        pres = [RationalMatrix(q) for q in pres]
        if self.rule == SPROCEDURE:
            return block_diag(*(q * (1 / lam) for q, lam in zip(pres, self.multipliers)))
        q = self.T @ pres[0] @ self.T.T
        if self.constant != 0:
            e = RationalMatrix.column([int(v == self.target) for v in self.out_support])
            q = q * (1 / self.split) + (e @ e.T) * (self.constant ** 2 / (1 - self.split))
        return q

    def to_dict(self):
        out = {'rule': self.rule,
               'stmt_index': self.stmt_index,
               'in_supports': [list(s) for s in self.in_supports],
               'out_support': list(self.out_support)}
        if self.T is not None:
            out['T'] = [[_exact_str(v) for v in row] for row in self.T.tolist()]
        if self.multipliers:
            out['multipliers'] = [_exact_str(m) for m in self.multipliers]
            out['reciprocals'] = [render_float(1 / m) for m in self.multipliers]
        if self.constant != 0:
            out['constant'] = _exact_str(self.constant)
            out['split'] = _exact_str(self.split)
        return out


# ------------------ rules --------------------


def _affine(q, stmt, split=DEFAULT_SPLIT, stmt_index=None):
    q = to_qform(q)
    outside = [v for v in stmt.variables if v not in q.support]
    if outside:
        raise NotApplicable(f'{outside} read by {stmt.lhs} lie outside {list(q.support)}')

    n = q.dim
    row = [stmt.coeff(v) for v in q.support]
    rows = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    if stmt.lhs in q.support:
        rows[q.index(stmt.lhs)] = row
        support = q.support
    else:
        rows.append(row)
        support = q.support + (stmt.lhs,)
    t = RationalMatrix(rows) if rows else RationalMatrix.zeros(0, n)

    constant = stmt.constant
    if constant != 0:
        split = to_rational(split)
        if not 0 < split < 1:
            raise ValueError(f'split must lie in (0, 1), got {split}')
    record = TransformRecord(AFFINE_ELLIPSOID, (q.support,), support, T=t, constant=constant,
                             target=stmt.lhs, split=split if constant != 0 else None,
                             stmt_index=stmt_index)
    return Ellipsoid(Q_FORM, record.apply(q.matrix), support), record


def affine_update(q, stmt, split=DEFAULT_SPLIT):
    """
    Image of ``q`` under the assignment.

    T appends the row L of the assignment when its lhs is new to the
    support, or replaces the lhs row otherwise. A nonzero constant c is
    absorbed as T Q T^T / split + c^2 e e^T / (1 - split).

    Raises
    ------
    NotApplicable
        When the right-hand side reads variables outside the support
    """
    return _affine(q, stmt, split)[0]


def _select(q, keep, stmt_index=None):
    q = to_qform(q)
    keep = tuple(keep)
    idx = [q.index(v) for v in keep]
    t = RationalMatrix([[Fraction(int(j == i)) for j in range(q.dim)] for i in idx]) \
        if keep else RationalMatrix.zeros(0, q.dim)
    record = TransformRecord(REDUCE_ELLIPSOID, (q.support,), keep, T=t, stmt_index=stmt_index)
    return Ellipsoid(Q_FORM, record.apply(q.matrix), keep), record


def reduce(q, drop):
    """Projection dropping one variable: its row and column are deleted."""
    if drop not in q.support:
        raise ValueError(f'{drop!r} is not in the support {list(q.support)}')
    return _select(q, [v for v in q.support if v != drop])[0]


def permute(q, order):
    """Same set, support listed in ``order``."""
    if sorted(order) != sorted(q.support):
        raise ValueError(f'{list(order)} is not a reordering of {list(q.support)}')
    return _select(q, order)[0]


def _combine(es, stmt_index=None):
    es = [(to_qform(e), to_rational(lam)) for e, lam in es]
    if not es:
        raise ValueError('Nothing to combine')
    support = tuple(v for e, _ in es for v in e.support)
    if len(set(support)) != len(support):
        raise ValueError(f'Overlapping supports {[list(e.support) for e, _ in es]}')
    lams = tuple(lam for _, lam in es)
    if any(lam <= 0 for lam in lams):
        raise MultiplierError(f'Multipliers must be positive, got {[str(x) for x in lams]}')
    total = sum(lams, Fraction(0))
    if total != 1:
        raise MultiplierError(f'Multipliers sum to {total}, expected 1')
    record = TransformRecord(SPROCEDURE, tuple(e.support for e, _ in es), support,
                             multipliers=lams, stmt_index=stmt_index)
    return Ellipsoid(Q_FORM, record.apply(*(e.matrix for e, _ in es)), support), record


def sproc_combine(es):
    """
    S-procedure combination of ellipsoids over disjoint supports.

    Parameters
    ----------
    es: list of (Ellipsoid, multiplier)
        Multipliers positive and summing to exactly 1

    Returns
    -------
    Ellipsoid
        Over the concatenated supports, block diagonal with blocks Q_i / l_i
    """
    return _combine(es)[0]


def liveness(program):
    """Variables read after each statement (live-out sets)."""
    live = set()
    out = [frozenset()] * len(program.stmts)
    for i in reversed(range(len(program.stmts))):
        out[i] = frozenset(live)
        stmt = program.stmts[i]
        live.discard(stmt.lhs)
        live.update(stmt.variables)
    return out


# ------------------ propagation --------------------


@dataclass(eq=False)
class _Active:
    ellipsoid: Ellipsoid
    weight: Fraction
    key: tuple
    labels: FrozenSet[str]
    assumed: bool = False


@dataclass
class PropagationState:
    """
    Active ellipsoids (disjoint supports, ordered inductive first then by
    attachment), labels of observers already merged into another
    ellipsoid, and live-out sets.
    """
    current: list
    liveness: list
    consumed: set = field(default_factory=set)

    def owner(self, var):
        return next((a for a in self.current if var in a.ellipsoid.support), None)

    def check_disjoint(self):
        support = [v for a in self.current for v in a.ellipsoid.support]
        assert len(support) == len(set(support)), f'overlapping active supports {support}'


@dataclass(frozen=True)
class PropagationResult:
    annotated: object
    generated: Ellipsoid
    records: Tuple[TransformRecord, ...]
    consumed: FrozenSet[str] = frozenset()


class _Propagator:

    def __init__(self, annotated, split):
        self.annotated = annotated
        self.program = annotated.program
        self.split = split
        self.triples = []
        self.counts = {}
        start = _Active(annotated.body_pre, annotated.inductive.mu, (0,),
                        frozenset([annotated.inductive.label]))
        self.state = PropagationState([start], liveness(self.program))

    def label(self, position):
        k = self.counts.get(position, 0)
        self.counts[position] = k + 1
        return f'ellipsoid{position}_{k}'

    def add_triple(self, pres, post, record, position, stmt_index=None):
        tactic = SPROCEDURE if record.rule == SPROCEDURE else AFFINE_ELLIPSOID
        triple = HoareTriple(self.label(position), [a.ellipsoid for a in pres], stmt_index, post,
                             tactic, position, [a.assumed for a in pres], record.rule, record)
        self.triples.append(triple)
        logger.debug(f'{triple.label}: {record.rule} -> ({", ".join(post.support)})')

    def reduce(self, active, var, position):
        keep = [v for v in active.ellipsoid.support if v != var]
        if not keep:
            self.state.current.remove(active)
            logger.debug(f'Dropped ellipsoid over ({var}) at position {position}')
            return
        post, record = _select(active.ellipsoid, keep)
        self.add_triple([active], post, record, position)
        active.ellipsoid, active.assumed = post, False

    def merge(self, members, position):
        members = sorted(members, key=lambda a: a.key)
        total = sum((a.weight for a in members), Fraction(0))
        post, record = _combine([(a.ellipsoid, a.weight / total) for a in members])
        self.add_triple(members, post, record, position)
        merged = _Active(post, total, members[0].key, frozenset().union(*(a.labels for a in members)))
        self.state.consumed.update(merged.labels)
        self.state.current = sorted([a for a in self.state.current if a not in members] + [merged],
                                    key=lambda a: a.key)
        return merged

    def drop_dead(self, i):
        live = self.state.liveness[i]
        for active in list(self.state.current):
            support = active.ellipsoid.support
            dead = [v for v in support if v not in live and v not in self.program.state_vars]
            if len(dead) == len(support):
                self.state.current.remove(active)
                logger.debug(f'Dropped ellipsoid over ({", ".join(support)}) after statement {i}')
                continue
            for var in dead:
                self.reduce(active, var, i + 1)

    def statement(self, i, stmt):
        state = self.state
        owners = []
        for v in stmt.variables:
            active = state.owner(v)
            if active is None:
                raise PropagationError(f'{v} read by statement {i} ({stmt.lhs}) is not covered '
                                       f'by any ellipsoid', v, i)
            if active not in owners:
                owners.append(active)

        lhs_owner = state.owner(stmt.lhs)
        if not owners and lhs_owner is not None:
            owners = [lhs_owner]
        elif lhs_owner is not None and lhs_owner not in owners:
            self.reduce(lhs_owner, stmt.lhs, i)
        if not owners:
            if not state.current:
                raise PropagationError(f'No active ellipsoid to extend with {stmt.lhs}',
                                       stmt.lhs, i)
            owners = [state.current[0]]

        target = self.merge(owners, i) if len(owners) > 1 else owners[0]
        post, record = _affine(target.ellipsoid, stmt, self.split, stmt_index=i)
        self.add_triple([target], post, record, i, stmt_index=i)
        target.ellipsoid, target.assumed = post, False

    def attach(self, i, stmt, attachments):
        lhs_owner = self.state.owner(stmt.lhs)
        if lhs_owner is not None:
            self.reduce(lhs_owner, stmt.lhs, i)
        for k, a in enumerate(attachments):
            overlap = [v for v in a.ellipsoid.support if self.state.owner(v) is not None]
            if overlap:
                raise PropagationError(f'Assertive observer {a.observer.label} constrains '
                                       f'{overlap}, already covered', overlap[0], i)
            self.state.current.append(_Active(a.ellipsoid, a.observer.mu, (1, i, k),
                                              frozenset([a.observer.label]), assumed=True))
        self.state.current.sort(key=lambda a: a.key)

    def finish(self):
        program = self.program
        position = len(program.stmts)
        if not program.state_vars:
            raise PropagationError(f'Program {program.name} has no state to certify')
        holders = [a for a in self.state.current
                   if any(v in program.state_vars for v in a.ellipsoid.support)]
        for v in program.state_vars:
            if not any(v in a.ellipsoid.support for a in holders):
                raise PropagationError(f'State {v} is not covered at the end of the body', v)
        target = self.merge(holders, position) if len(holders) > 1 else holders[0]
        for var in list(target.ellipsoid.support):
            if var not in program.state_vars:
                self.reduce(target, var, position)
        if target.ellipsoid.support != program.state_vars:
            post, record = _select(target.ellipsoid, program.state_vars)
            self.add_triple([target], post, record, position)
            target.ellipsoid = post
        return target.ellipsoid

    def run(self):
        by_stmt = {}
        for a in self.annotated.attachments:
            by_stmt.setdefault(a.stmt_index, []).append(a)
        for i, stmt in enumerate(self.program.stmts):
            if i in by_stmt:
                self.attach(i, stmt, by_stmt[i])
            else:
                self.statement(i, stmt)
            self.drop_dead(i)
            self.state.check_disjoint()
        return self.finish()


def _check_multipliers(annotated):
    observers = annotated.observers
    if len(observers) < 2:
        return
    total = sum((o.mu for o in observers), Fraction(0))
    if total != 1:
        raise MultiplierError(f'Observer multipliers {[str(o.mu) for o in observers]} '
                              f'sum to {total}, expected 1')


def propagate(annotated, split=DEFAULT_SPLIT):
    """
    Walks the statements in order and emits one Hoare triple per rule
    application.

    Before a statement: the lhs is reduced out of a foreign ellipsoid, and
    the ellipsoids covering the right-hand side are merged (SProcedure,
    multipliers from the observers' mu normalised over the merged set).
    The statement itself gets an AffineEllipsoid triple, except where an
    assertive observer attaches: there the observer's ellipsoid becomes
    active and is assumed by its first use. After the statement, dead
    non-state variables are reduced. At the end, the ellipsoids over the
    states are merged, reduced to the states and put in state order.

    Parameters
    ----------
    annotated: AnnotatedProgram
        From ``Annotation.annotate``
    split: Fraction
        Share used for assignments with a nonzero constant

    Returns
    -------
    PropagationResult
        The annotated program with its triples, the generated final
        ellipsoid over the states and the transform record of each triple

    Raises
    ------
    PropagationError
        When a variable is read while no ellipsoid covers it
    MultiplierError
        When the observers' multipliers do not sum to 1
    """
    _check_multipliers(annotated)
    propagator = _Propagator(annotated, split)
    generated = propagator.run()
    triples = tuple(propagator.triples)
    result = PropagationResult(replace(annotated, triples=triples), generated,
                               tuple(t.record for t in triples),
                               frozenset(propagator.state.consumed))
    logger.info(f'Propagated {annotated.program.name}: {len(triples)} triples, generated '
                f'ellipsoid over ({", ".join(generated.support)})')
    return result
