import random
import unittest
from fractions import Fraction

from pycredible.Linalg import RationalMatrix
from pycredible.Spec import ObserverSpec, load_fixture
from pycredible.Codegen import (AffineAssignment, StraightLineProgram, LoweringError,
                                InterpretError, lower, interpret, emit_c, render_c_scalar,
                                render_acsl_scalar, CEmitter)
from pycredible.Annotation import annotate
from pycredible.Propagation import propagate

from helpers import random_spec, random_raw_inputs


RUNNING_EXAMPLE_STMTS = (
    ('Sum4', (('y', 1), ('yd', -1))),
    ('x1', (('Integrator_1_memory', 1),)),
    ('x2', (('Integrator_2_memory', 1),)),
    ('C11', (('x1', '564.48'),)),
    ('D11', (('Sum4', 1280),)),
    ('u', (('C11', 1), ('D11', 1))),
    ('A11', (('x1', '0.499'),)),
    ('A12', (('x2', '-0.05'),)),
    ('A21', (('x1', '0.01'),)),
    ('B21', (('Sum4', '0.01'),)),
    ('Integrator_1_memory', (('A11', 1), ('A12', 1))),
    ('Integrator_2_memory', (('A21', 1), ('x2', 1), ('B21', 1))),
)


class TestIR(unittest.TestCase):

    def test_assignment(self):
        stmt = AffineAssignment('z', {'x': '0.5', 'y': -2}, '1/3')
        self.assertEqual(stmt.variables, ('x', 'y'))
        self.assertEqual(stmt.coeff('y'), -2)
        self.assertEqual(stmt.coeff('w'), 0)
        self.assertEqual(stmt.evaluate({'x': 2, 'y': Fraction(1, 2)}), Fraction(1, 3))
        self.assertEqual(stmt, AffineAssignment('z', [('x', Fraction(1, 2)), ('y', -2)],
                                                Fraction(1, 3)))
        with self.assertRaises(ValueError):
            AffineAssignment('z', [('x', 1), ('x', 2)])
        with self.assertRaises(InterpretError):
            stmt.evaluate({'x': 1})

    def test_program_validation(self):
        ok = dict(name='p', input_vars=['a'], output_vars=['b'], state_vars=['s'], temps=['t'],
                  stmts=[AffineAssignment('t', {'a': 1, 's': 1}), AffineAssignment('b', {'t': 2}),
                         AffineAssignment('s', {'t': 1})])
        program = StraightLineProgram(**ok)
        self.assertEqual(len(program), 3)
        self.assertEqual(program.x0, (0,))
        self.assertEqual(program.io_vars, ('a', 'b'))
        self.assertEqual([program.kind_of(v) for v in 'abst'], ['input', 'output', 'state', 'temp'])
        with self.assertRaises(KeyError):
            program.kind_of('z')

        bad = (dict(temps=['t', 'a']),
               dict(x0=[1, 2]),
               dict(stmts=[AffineAssignment('b', {'t': 2})] + ok['stmts']),
               dict(stmts=ok['stmts'] + [AffineAssignment('a', {'t': 1})]),
               dict(stmts=ok['stmts'][:1]))
        for change in bad:
            with self.assertRaises(ValueError):
                StraightLineProgram(**{**ok, **change})


class TestLower(unittest.TestCase):

    def test_running_example(self):
        program = lower(load_fixture('running_example'))
        expected = tuple(AffineAssignment(lhs, coeffs) for lhs, coeffs in RUNNING_EXAMPLE_STMTS)
        self.assertEqual(program.stmts, expected)
        self.assertEqual(program.temps, ('Sum4', 'x1', 'x2', 'C11', 'D11', 'A11', 'A12', 'A21',
                                         'B21'))
        self.assertEqual(program.input_vars, ('y', 'yd'))
        self.assertEqual(program.output_vars, ('u',))
        self.assertEqual(program.state_vars, ('Integrator_1_memory', 'Integrator_2_memory'))

    def test_interpret(self):
        program = lower(load_fixture('running_example'))
        u, x = interpret(program, {'y': '0.5', 'yd': 0}, [0, 0])
        self.assertEqual(u, (Fraction(640),))
        self.assertEqual(x, (Fraction(0), Fraction(1, 200)))
        self.assertEqual(interpret(program, ['0.5', 0], {'Integrator_1_memory': 0,
                                                          'Integrator_2_memory': 0}), (u, x))
        with self.assertRaises(InterpretError):
            interpret(program, {'y': 1}, [0, 0])
        with self.assertRaises(InterpretError):
            interpret(program, [1, 0], [0])

    def test_semantic_preservation(self):
        rng = random.Random(11)
        for s in range(20):
            spec = random_spec(rng, name=f'c{s}', observers=False, plain_inputs=True)
            program = lower(spec)
            for _ in range(1000):
                raw = random_raw_inputs(rng, spec)
                x = [Fraction(rng.randint(-100, 100), rng.randint(1, 9)) for _ in range(spec.n)]
                self.assertEqual(interpret(program, raw, x),
                                 spec.step(x, spec.effective_inputs(raw)))

    def test_errors(self):
        spec = load_fixture('running_example')
        with self.assertRaises(TypeError):
            lower('running_example')
        stateless = type(spec)('gain', [], RationalMatrix.zeros(0, 1), [[]], [['2']], [], ['r'],
                               ['u'], [])
        with self.assertRaises(LoweringError):
            lower(stateless)

    def test_name_clash(self):
        spec = load_fixture('running_example')
        renamed = type(spec)('clash', spec.A, spec.B, spec.C, spec.D, ['x1', 'x2'],
                             spec.inputs, ['C11'], spec.x0)
        program = lower(renamed)
        self.assertEqual(program.temps[1:5], ('x1_1', 'x2_1', 'C11_1', 'D11'))


class TestEmit(unittest.TestCase):

    def test_scalars(self):
        cases = ((Fraction(1280), '1280.0', '1280.0'),
                 (Fraction(-1, 20), '-0.05', '-0.05'),
                 (Fraction(1, 3), '(1.0/3.0)', '(1/3)'),
                 (Fraction(-2, 7), '-(2.0/7.0)', '(-2/7)'))
        for value, c_text, acsl_text in cases:
            self.assertEqual(render_c_scalar(value), c_text)
            self.assertEqual(render_acsl_scalar(value), acsl_text)

    def test_plain_code(self):
        text = emit_c(lower(load_fixture('running_example')))
        for line in ('typedef struct {', '  double yd;', '} t_running_example_io;',
                     '} t_running_example_state;',
                     'void running_example_init(t_running_example_state *_state_) {',
                     '  _state_->Integrator_1_memory = 0.0;',
                     'void running_example_compute(t_running_example_io *_io_, '
                     't_running_example_state *_state_) {',
                     '  double Sum4;',
                     '    Sum4 = _io_->y - _io_->yd;',
                     '    x1 = _state_->Integrator_1_memory;',
                     '    C11 = 564.48 * x1;',
                     '    D11 = 1280.0 * Sum4;',
                     '    _io_->u = C11 + D11;',
                     '    A12 = -0.05 * x2;',
                     '    _state_->Integrator_2_memory = A21 + x2 + B21;'):
            self.assertIn(line + '\n', text)
        self.assertNotIn('/*@', text)

    def test_annotated_code(self):
        spec = load_fixture('running_example')
        program = lower(spec)
        result = propagate(annotate(program, spec.observers))
        emitter = CEmitter(program, result.annotated)
        text = emitter.emit()
        self.assertEqual(emitter.fraction_literals[:3], ['QMat_0', 'QMat_1', 'QMat_2'])
        self.assertIn('PROOF_TACTIC (use_strategy (AffineEllipsoid));', text)
        self.assertIn('PROOF_TACTIC (use_strategy (SProcedure));', text)
        self.assertIn('mat_scalar_mult((1/0.9991),', text)
        self.assertIn('mat_scalar_mult((1/0.0009),', text)
        self.assertIn('/*@ logic matrix QMat_0 = mat_of_2x2_scalar(', text)
        self.assertIn('/*@ requires in_ellipsoidQ(QMat_0,vect_of_2_scalar('
                      '_state_->Integrator_1_memory,_state_->Integrator_2_memory));', text)
        self.assertIn('  @ ensures in_ellipsoidQ(QMat_1,', text)
        self.assertIn('  /*@ behavior ellipsoid4_0:\n    @ assumes in_ellipsoidQ(', text)
        self.assertIn('  {\n  }\n', text)
        self.assertEqual(text, emit_c(program, result.annotated))

        with self.assertRaises(ValueError):
            CEmitter(lower(load_fixture('running_example_flipped')), result.annotated)

    def test_fraction_literals(self):
        spec = load_fixture('running_example')
        spec = spec.with_observers([ObserverSpec(
            'Stability', spec.state_names, 'P', [['1/3', '0'], ['0', '1']], '0.9991'),
            spec.observers[1]])
        program = lower(spec)
        emitter = CEmitter(program, propagate(annotate(program, spec.observers)).annotated)
        text = emitter.emit()
        self.assertNotIn('QMat_0', emitter.fraction_literals)
        self.assertIn('mat_of_2x2_scalar(3.0,0.0,0.0,1.0)', text)


if __name__ == '__main__':
    unittest.main()
