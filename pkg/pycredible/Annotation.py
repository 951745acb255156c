"""
Observer insertion: typing of the ellipsoid observers and their placement
in the loop body as Hoare pre/postconditions.

An observer over memory (state) variables only is inductive and becomes the
function contract; an observer over memoryless signals only is assertive and
is assumed right after the first statement assigning one of its variables.
"""

# Python
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

# Project
from pycredible.Linalg import extract_submatrix
from pycredible.Spec import Ellipsoid, Q_FORM, INDUCTIVE, ASSERTIVE, AUTO, ObserverSpec
from pycredible.Codegen import StraightLineProgram, TACTICS


__all__ = ['ClassificationError', 'InsertionError', 'Contract', 'AssertiveAttachment',
           'HoareTriple', 'AnnotatedProgram', 'classify', 'insert_assertive',
           'insert_inductive', 'annotate']


logger = logging.getLogger(__name__)


class ClassificationError(ValueError):
    def __init__(self, message, variables=()):
        self.variables = tuple(variables)
        super().__init__(message)


class InsertionError(ValueError):
    pass


@dataclass(frozen=True)
class Contract:
    pre: Ellipsoid
    post: Ellipsoid


@dataclass(frozen=True)
class AssertiveAttachment:
    """Assertive observer assumed after statement ``stmt_index``."""
    observer: ObserverSpec
    stmt_index: int
    ellipsoid: Ellipsoid


@dataclass(frozen=True)
class HoareTriple:
    """
    {pre...} stmt {post}

    ``position`` is the number of statements executed before the triple;
    ``stmt_index`` is None for a Skip (empty block), otherwise equal to
    ``position``. ``assumed[i]`` marks pre[i] as an assumption (``assumes``)
    rather than an obligation (``requires``).
    """
    label: str
    pre: Tuple[Ellipsoid, ...]
    stmt_index: Optional[int]
    post: Ellipsoid
    tactic: str
    position: int
    assumed: Tuple[bool, ...] = ()
    rule: str = ''
    record: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, 'pre', tuple(self.pre))
        object.__setattr__(self, 'assumed', tuple(self.assumed) or (False,) * len(self.pre))
        object.__setattr__(self, 'rule', self.rule or self.tactic)

        # ------ integrity checks -------
        if not self.pre:
            raise ValueError(f'Triple {self.label} has no precondition')
        if len(self.assumed) != len(self.pre):
            raise ValueError(f'Triple {self.label}: {len(self.assumed)} flags '
                             f'for {len(self.pre)} preconditions')
        if self.tactic not in TACTICS:
            raise ValueError(f'Unknown proof tactic {self.tactic!r}')
        if self.stmt_index is not None and self.stmt_index != self.position:
            raise ValueError(f'Triple {self.label} wraps statement {self.stmt_index} '
                             f'at position {self.position}')

    @property
    def is_skip(self):
        return self.stmt_index is None

    def __repr__(self):
        where = 'skip' if self.is_skip else f'stmt {self.stmt_index}'
        return f'<HoareTriple {self.label} {self.rule} {where}>'


@dataclass(frozen=True)
class AnnotatedProgram:
    """
    Program plus contract, assertive attachments and (after propagation) the
    ordered Hoare triples. ``body_pre`` is the precondition at body start.
    """
    program: StraightLineProgram
    contract: Contract
    body_pre: Ellipsoid
    inductive: ObserverSpec
    attachments: Tuple[AssertiveAttachment, ...] = ()
    triples: Tuple[HoareTriple, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'attachments', tuple(self.attachments))
        object.__setattr__(self, 'triples', tuple(self.triples))
        positions = [t.position for t in self.triples]
        if positions != sorted(positions):
            raise ValueError('Triples are not in program order')
        wrapped = [t.stmt_index for t in self.triples if not t.is_skip]
        if len(wrapped) != len(set(wrapped)):
            raise ValueError('A statement carries more than one triple')

    @property
    def observers(self):
        return (self.inductive,) + tuple(a.observer for a in self.attachments)


def _program_vars(program):
    return set(program.io_vars) | set(program.state_vars) | set(program.temps)


def classify(observer, program):
    """
    INDUCTIVE when every variable is a state (memory) variable, ASSERTIVE
    when none is.

    Raises
    ------
    ClassificationError
        On unknown or mixed variables, or when an explicit ``kind`` on the
        observer contradicts its variables
    """
    unknown = [v for v in observer.variables if v not in _program_vars(program)]
    if unknown:
        raise ClassificationError(f'Observer {observer.label} names unknown variables {unknown}',
                                  unknown)
    memory = [v for v in observer.variables if v in program.state_vars]
    if memory and len(memory) != len(observer.variables):
        other = [v for v in observer.variables if v not in memory]
        raise ClassificationError(f'Observer {observer.label} mixes memory variables {memory} '
                                  f'with memoryless {other}', observer.variables)
    kind = INDUCTIVE if memory else ASSERTIVE
    if observer.kind not in (AUTO, kind):
        raise ClassificationError(f'Observer {observer.label} is declared {observer.kind} '
                                  f'but its variables make it {kind}', observer.variables)
    return kind


def insert_assertive(program, observer):
    """
    Attaches an assertive observer to the first statement assigning any of
    its variables.

    Returns
    -------
    AssertiveAttachment
    """
    stmt_index = next((i for i, s in enumerate(program.stmts) if s.lhs in observer.variables),
                      None)
    if stmt_index is None:
        raise InsertionError(f'No statement assigns a variable of observer {observer.label} '
                             f'{list(observer.variables)}')
    defined = set(program.input_vars) | set(program.state_vars)
    defined.update(s.lhs for s in program.stmts[:stmt_index + 1])
    pending = [v for v in observer.variables if v not in defined]
    if pending:
        raise InsertionError(f'Observer {observer.label}: {pending} not yet assigned '
                             f'at statement {stmt_index}')
    logger.debug(f'Assertive observer {observer.label} attached to statement {stmt_index}')
    return AssertiveAttachment(observer, stmt_index, observer.qform)


def insert_inductive(program, observer):
    """
    Contract of the compute function: the observer's Q-form, reordered to
    the program's state order, as both pre and postcondition.
    """
    if set(observer.variables) != set(program.state_vars):
        missing = [v for v in program.state_vars if v not in observer.variables]
        raise InsertionError(f'Inductive observer {observer.label} does not cover states '
                             f'{missing}')
    q = observer.qform
    idx = [q.index(v) for v in program.state_vars]
    matrix = extract_submatrix(q.matrix, idx, idx)
    e = Ellipsoid(Q_FORM, matrix, program.state_vars)
    return Contract(e, e)


def annotate(program, observers):
    """
    Classifies and inserts every observer.

    Returns
    -------
    AnnotatedProgram
        Without triples; ``Propagation.propagate`` fills them in
    """
    inductive, assertive = [], []
    for o in observers:
        (inductive if classify(o, program) == INDUCTIVE else assertive).append(o)
    if not inductive:
        raise InsertionError('No inductive observer')
    if len(inductive) > 1:
        raise InsertionError(f'Exactly one inductive observer is supported, got '
                             f'{[o.label for o in inductive]}')

    contract = insert_inductive(program, inductive[0])
    attachments = sorted((insert_assertive(program, o) for o in assertive),
                         key=lambda a: a.stmt_index)
    logger.info(f'Annotated {program.name}: inductive {inductive[0].label}, '
                f'{len(attachments)} assertive observer(s)')
    return AnnotatedProgram(program, contract, contract.pre, inductive[0], attachments)
