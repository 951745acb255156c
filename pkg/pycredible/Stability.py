"""
Model-level stability certificates.

``check_lmi`` decides, exactly, the invariance LMI of an ellipsoid
{x : x^T P x <= 1} for x+ = A x + B y under a quadratic input bound:

    [ A^T P A - (1 - alpha) P     A^T P B            ]
    [ B^T P A                     B^T P B - alpha Y  ]  <= 0

where y^T Y y <= 1 is the input bound. ``simulate`` is the float
falsification companion.
"""

# Python
import logging
from fractions import Fraction
from dataclasses import dataclass

# External
import numpy as np
import pandas as pd

# Project
from pycredible.Linalg import (RationalMatrix, DimensionError, block_diag, block_matrix,
                               extract_submatrix, invert, ldlt_psd, quadratic_form, to_rational)
from pycredible.Spec import (Ellipsoid, P_FORM, Q_FORM, INDUCTIVE, AUTO,
                             to_pform, to_qform)


__all__ = ['StabilityCertificate', 'SimTrace', 'INPUT_MODES', 'certificate_from_spec',
           'lmi_matrix', 'check_lmi', 'one_step_decrease', 'simulate']


logger = logging.getLogger(__name__)

INPUT_MODES = ('zero', 'constant', 'uniform')


@dataclass(frozen=True)
class StabilityCertificate:
    """
    P (P-form, over the states in spec order), the decay share alpha and the
    Q-form bound on the controller inputs (in spec order).
    """
    P: RationalMatrix
    alpha: Fraction
    input_bound: Ellipsoid

    def __post_init__(self):
        object.__setattr__(self, 'P', RationalMatrix(self.P))
        object.__setattr__(self, 'alpha', to_rational(self.alpha))
        # raises unless P is positive definite
        Ellipsoid(P_FORM, self.P, [f'x{i}' for i in range(self.P.rows)])
        if not 0 < self.alpha < 1:
            raise ValueError(f'alpha must lie in (0, 1), got {self.alpha}')
        if self.input_bound.form != Q_FORM:
            raise ValueError('The input bound must be a Q-form ellipsoid')


def _reorder(matrix, support, order):
    idx = [support.index(v) for v in order]
    return extract_submatrix(matrix, idx, idx)


def _is_inductive(observer, spec):
    if observer.kind == AUTO:
        return set(observer.variables) <= set(spec.state_names)
    return observer.kind == INDUCTIVE


def certificate_from_spec(spec, alpha=None):
    """
    Certificate read off the spec's observers.

    P comes from the single inductive observer; alpha defaults to 1 - mu of
    that observer. Assertive observers over controller inputs are merged
    into one bound weighted by their shares mu_i / sum(mu), so the LMI input block is
    B^T P B - alpha * sum(mu_i Y_i) / sum(mu).
    """
    inductive = [o for o in spec.observers if _is_inductive(o, spec)]
    if len(inductive) != 1:
        raise ValueError(f'Expected exactly one inductive observer, found {len(inductive)}')
    observer = inductive[0]
    if set(observer.variables) != set(spec.state_names):
        raise ValueError(f'Inductive observer {observer.label} must cover every state')
    p = _reorder(to_pform(observer.ellipsoid).matrix, observer.variables, spec.state_names)
    alpha = 1 - observer.mu if alpha is None else to_rational(alpha)

    bounds = [o for o in spec.observers
              if o.kind != INDUCTIVE and o is not observer
              and set(o.variables) <= set(spec.input_names)]
    covered = [v for o in bounds for v in o.variables]
    missing = [v for v in spec.input_names if v not in covered]
    if missing:
        raise ValueError(f'No assertive observer bounds the input(s) {missing}')
    if len(covered) != len(set(covered)):
        raise ValueError('Input bounds overlap')

    total = sum((o.mu for o in bounds), Fraction(0))
    blocks = [to_qform(o.ellipsoid).matrix * (total / o.mu) for o in bounds]
    q = _reorder(block_diag(*blocks), covered, spec.input_names) if blocks \
        else RationalMatrix.zeros(0, 0)
    logger.debug(f'Certificate for {spec.name}: alpha={alpha}, {len(bounds)} input bound(s)')
    return StabilityCertificate(p, alpha, Ellipsoid(Q_FORM, q, spec.input_names))


def lmi_matrix(spec, cert):
    """The (n+m)x(n+m) LMI block matrix, exact."""
    a, b, p = spec.A, spec.B, cert.P
    if p.shape != (spec.n, spec.n):
        raise DimensionError(f'P has shape {p.shape}, expected {(spec.n, spec.n)}')
    if cert.input_bound.dim != spec.m:
        raise DimensionError(f'Input bound over {cert.input_bound.dim} variable(s), '
                             f'expected {spec.m}')
    # SingularMatrixError on a flat input bound
    y = invert(cert.input_bound.matrix) if spec.m else RationalMatrix.zeros(0, 0)

    top_left = a.T @ p @ a - p * (1 - cert.alpha)
    top_right = a.T @ p @ b
    bottom_right = b.T @ p @ b - y * cert.alpha
    return block_matrix([[top_left, top_right], [top_right.T, bottom_right]])


def check_lmi(spec, cert):
    """
    Exact non-strict LMI check.

    Returns
    -------
    PsdVerdict
        The decision on minus the LMI matrix: ProvenPSD means the LMI holds;
        the margin is the smallest pivot of the negated matrix.
    """
    verdict = ldlt_psd(-lmi_matrix(spec, cert))
    logger.info(f'LMI for {spec.name} with alpha={cert.alpha}: {verdict.status}')
    return verdict


def one_step_decrease(spec, P, x, y):
    """
    Exact test of (A x + B y)^T P (A x + B y) <= x^T P x at one point.
    """
    p = RationalMatrix(P)
    x = [to_rational(v) for v in x]
    y = [to_rational(v) for v in y]
    if len(x) != spec.n or len(y) != spec.m or p.shape != (spec.n, spec.n):
        raise DimensionError(f'Point sizes ({len(x)}, {len(y)}) and P shape {p.shape} '
                             f'do not match n={spec.n}, m={spec.m}')
    _, x_next = spec.step(x, y)
    return quadratic_form(p, x_next) <= quadratic_form(p, x)


@dataclass(frozen=True, eq=False)
class SimTrace:
    """
    Float trajectory. ``frame`` has one row per step (steps + 1 rows) and the
    columns step, states..., inputs..., outputs..., level.
    """
    frame: pd.DataFrame
    seed: int
    input_mode: str

    @property
    def max_level(self):
        return float(self.frame['level'].max())

    @property
    def steps(self):
        return len(self.frame) - 1

    def to_csv(self, path=None):
        """Writes the trace to ``path``; without one the CSV text is returned."""
        return self.frame.to_csv(path, index=False)


def _input_groups(spec):
    """(input indices, float Q) per assertive observer over controller inputs."""
    groups = []
    for o in spec.observers:
        if o.kind != INDUCTIVE and o.variables and set(o.variables) <= set(spec.input_names):
            idx = [spec.input_names.index(v) for v in o.variables]
            groups.append((idx, to_qform(o.ellipsoid).matrix.to_float()))
    covered = {i for idx, _ in groups for i in idx}
    if covered != set(range(spec.m)):
        missing = [spec.input_names[i] for i in range(spec.m) if i not in covered]
        raise ValueError(f'Uniform inputs need a declared bound for {missing}')
    return groups


def _uniform_inputs(spec, rng, count):
    """Samples drawn uniformly inside each declared input ellipsoid."""
    values = np.zeros((count, spec.m))
    for idx, q in _input_groups(spec):
        d = len(idx)
        w, vecs = np.linalg.eigh(q)
        root = vecs * np.sqrt(np.clip(w, 0, None))
        g = rng.standard_normal((count, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0] = 1
        radius = rng.random((count, 1)) ** (1 / d)
        values[:, idx] = (g / norms * radius) @ root.T
    return values


def simulate(spec, steps, seed=0, input_mode='uniform', constant=None, P=None):
    """
    Runs x+ = A x + B y, u = C x + D y in double precision from x0.

    Parameters
    ----------
    spec: ControllerSpec
    steps: int
        Number of transitions; the trace holds steps + 1 rows
    seed: int
        Seed of ``numpy.random.default_rng``
    input_mode: {'zero', 'constant', 'uniform'}
        Uniform samples lie inside the declared assertive input bounds
    constant: float or sequence, optional
        Input value for the 'constant' mode
    P: array_like, optional
        Level matrix; defaults to the inductive observer's P

    Returns
    -------
    SimTrace
    """
    if steps < 0:
        raise ValueError(f'steps must be nonnegative, got {steps}')
    if input_mode not in INPUT_MODES:
        raise ValueError(f'Invalid input mode {input_mode!r}, expected one of {INPUT_MODES}')
    p = certificate_from_spec(spec).P.to_float() if P is None else \
        RationalMatrix(P).to_float()

    a, b, c, d = (getattr(spec, attr).to_float() for attr in 'ABCD')
    count = steps + 1
    if input_mode == 'zero':
        inputs = np.zeros((count, spec.m))
    elif input_mode == 'constant':
        if constant is None:
            raise ValueError("The 'constant' input mode needs a value")
        inputs = np.broadcast_to(np.asarray(constant, dtype=float), (count, spec.m)).copy()
    else:
        inputs = _uniform_inputs(spec, np.random.default_rng(seed), count)

    drive = inputs @ b.T
    states = np.empty((count, spec.n))
    x = np.array([float(v) for v in spec.x0])
    for t in range(count):
        states[t] = x
        x = a @ x + drive[t]
    outputs = states @ c.T + inputs @ d.T
    levels = np.einsum('ij,jk,ik->i', states, p, states)

    frame = pd.concat([pd.DataFrame({'step': np.arange(count)}),
                       pd.DataFrame(states, columns=list(spec.state_names)),
                       pd.DataFrame(inputs, columns=list(spec.input_names)),
                       pd.DataFrame(outputs, columns=list(spec.output_names)),
                       pd.DataFrame({'level': levels})], axis=1)
    trace = SimTrace(frame, seed, input_mode)
    logger.info(f'Simulated {spec.name} for {steps} step(s), max level {trace.max_level:.6g}')
    return trace
