import math
import random
import unittest
from fractions import Fraction

import numpy as np

from pycredible.Linalg import (RationalMatrix, PROVEN_PSD, PROVEN_NOT_PSD, SingularMatrixError,
                               quadratic_form)
from pycredible.Spec import (Ellipsoid, ObserverSpec, ControllerSpec, Q_FORM, P_FORM,
                             load_fixture)
from pycredible.Stability import (StabilityCertificate, certificate_from_spec, lmi_matrix,
                                  check_lmi, one_step_decrease, simulate)


class TestCertificate(unittest.TestCase):

    def test_from_spec(self):
        spec = load_fixture('running_example')
        cert = certificate_from_spec(spec)
        self.assertEqual(cert.alpha, Fraction(9, 10000))
        self.assertEqual(cert.P, spec.observers[0].matrix)
        self.assertEqual(cert.input_bound.matrix, RationalMatrix([['0.5']]))
        self.assertEqual(cert.input_bound.support, ('Sum4',))
        self.assertEqual(certificate_from_spec(spec, alpha='0.0004').alpha, Fraction(4, 10000))

    def test_weighted_bounds(self):
        # two assertive observers: each Q_i is scaled by sum(mu) / mu_i
        base = load_fixture('running_example')
        spec = ControllerSpec('two_inputs', base.A, [['0', '0'], ['0.01', '0.02']], base.C,
                              [['1280', '0']], base.state_names, list(base.inputs) + ['r'],
                              base.output_names, base.x0,
                              [ObserverSpec('Stability', base.state_names, P_FORM,
                                            base.observers[0].matrix, '0.9'),
                               ObserverSpec('Err', ['Sum4'], Q_FORM, [['0.5']], '0.06'),
                               ObserverSpec('Ref', ['r'], Q_FORM, [['2']], '0.04')])
        cert = certificate_from_spec(spec)
        self.assertEqual(cert.alpha, Fraction(1, 10))
        self.assertEqual(cert.input_bound.matrix,
                         RationalMatrix([[Fraction(1, 2) * Fraction(10, 6), 0],
                                         [0, 2 * Fraction(10, 4)]]))

    def test_errors(self):
        spec = load_fixture('running_example')
        with self.assertRaises(ValueError):
            certificate_from_spec(spec.with_observers(()))
        with self.assertRaises(ValueError):
            certificate_from_spec(spec.with_observers(spec.observers[:1]))
        with self.assertRaises(ValueError):
            certificate_from_spec(spec, alpha='1.5')
        with self.assertRaises(ValueError):
            StabilityCertificate([[1, 2], [2, 1]], '0.1', Ellipsoid(Q_FORM, [[1]], ['y']))
        with self.assertRaises(ValueError):
            StabilityCertificate([[1]], '0.1', Ellipsoid(P_FORM, [[1]], ['y']))

    def test_flat_bound(self):
        spec = load_fixture('running_example')
        cert = StabilityCertificate(spec.observers[0].matrix, '0.1',
                                    Ellipsoid(Q_FORM, [[0]], ['Sum4']))
        with self.assertRaises(SingularMatrixError):
            lmi_matrix(spec, cert)


class TestLmi(unittest.TestCase):

    def test_running_example_verdicts(self):
        cases = (('running_example', None, PROVEN_NOT_PSD),
                 ('running_example', '0.0004', PROVEN_PSD),
                 ('running_example_certified', None, PROVEN_PSD),
                 ('running_example_flipped', None, PROVEN_NOT_PSD),
                 ('running_example_flipped', '0.0004', PROVEN_NOT_PSD))
        for name, alpha, status in cases:
            spec = load_fixture(name)
            verdict = check_lmi(spec, certificate_from_spec(spec, alpha))
            self.assertEqual(verdict.status, status, (name, alpha))

    def test_matrix(self):
        spec = load_fixture('running_example_certified')
        m = lmi_matrix(spec, certificate_from_spec(spec))
        self.assertEqual(m.shape, (3, 3))
        self.assertTrue(m.is_symmetric())
        # input block: B^T P B - alpha * 2
        p = spec.observers[0].matrix
        self.assertEqual(m[2, 2], (spec.B.T @ p @ spec.B)[0, 0] - Fraction(8, 10000))

    def test_float_oracle(self):
        spec = load_fixture('running_example_certified')
        m = lmi_matrix(spec, certificate_from_spec(spec)).to_float()
        self.assertLess(np.linalg.eigvalsh(m).max(), 1e-12)

    def test_one_step_decrease(self):
        flipped = load_fixture('running_example_flipped')
        p = flipped.observers[0].matrix
        self.assertFalse(one_step_decrease(flipped, p, [0, 0], ['0.5']))

        spec = load_fixture('running_example_certified')
        p = spec.observers[0].matrix
        rng = random.Random(3)
        for _ in range(200):
            x = [Fraction(rng.randint(-400, 400), 10) for _ in range(2)]
            self.assertTrue(one_step_decrease(spec, p, x, [0]))
            x_next = spec.step(x, [0])[1]
            self.assertLessEqual(quadratic_form(p, x_next), quadratic_form(p, x))

    def test_invariance_exact(self):
        # x^T P x <= s and y^2 <= s * q imply x+^T P x+ <= s, s = 1 after scaling
        spec = load_fixture('running_example_certified')
        p = spec.observers[0].matrix
        q = certificate_from_spec(spec).input_bound.matrix[0, 0]
        rng = random.Random(31)

        def below_sqrt(v, scale=10 ** 6):
            return Fraction(math.isqrt(v.numerator * scale * scale // v.denominator), scale)

        for i in range(10000):
            d = [Fraction(rng.randint(-1000, 1000), rng.randint(1, 50)) for _ in range(2)]
            s = quadratic_form(p, d)
            if s == 0:
                continue
            e = below_sqrt(s * q) * rng.choice([-1, 1])
            if i % 2:
                # interior: shrink both the state and the input
                t = Fraction(rng.randint(0, 100), 100)
                d = [v * t for v in d]
                e = e * Fraction(rng.randint(0, 100), 100)
            self.assertLessEqual(e * e, s * q)
            self.assertLessEqual(quadratic_form(p, d), s)
            _, x_next = spec.step(d, [e])
            self.assertLessEqual(quadratic_form(p, x_next), s)

        # unscaled interior points of the unit level set
        for _ in range(1000):
            d = [Fraction(rng.randint(-1000, 1000), rng.randint(1, 50)) for _ in range(2)]
            s = quadratic_form(p, d)
            if s == 0:
                continue
            t = below_sqrt(1 / s)
            x = [v * t for v in d]
            y = below_sqrt(q) * Fraction(rng.randint(-100, 100), 100)
            self.assertLessEqual(quadratic_form(p, x), 1)
            _, x_next = spec.step(x, [y])
            self.assertLessEqual(quadratic_form(p, x_next), 1)


class TestSimulate(unittest.TestCase):

    def test_invariance(self):
        spec = load_fixture('running_example_certified')
        trace = simulate(spec, 100000, seed=0)
        self.assertEqual(trace.steps, 100000)
        self.assertLessEqual(trace.max_level, 1)
        self.assertGreater(trace.max_level, 0)
        inputs = trace.frame['Sum4'].to_numpy()
        self.assertTrue(np.all(inputs ** 2 <= 0.5))

    def test_frame(self):
        spec = load_fixture('running_example_certified')
        trace = simulate(spec, 10, seed=5)
        self.assertEqual(list(trace.frame.columns),
                         ['step', 'Integrator_1_memory', 'Integrator_2_memory', 'Sum4', 'u',
                          'level'])
        self.assertEqual(len(trace.frame), 11)
        self.assertTrue(trace.to_csv().startswith('step,Integrator_1_memory'))
        again = simulate(spec, 10, seed=5)
        self.assertTrue(trace.frame.equals(again.frame))
        self.assertFalse(trace.frame.equals(simulate(spec, 10, seed=6).frame))

    def test_modes(self):
        spec = load_fixture('running_example_certified')
        zero = simulate(spec, 20, input_mode='zero')
        self.assertEqual(zero.max_level, 0)
        const = simulate(spec, 3, input_mode='constant', constant=0.5)
        self.assertTrue(np.allclose(const.frame['Integrator_2_memory'][:3], [0, 0.005, 0.01]))
        self.assertTrue(np.allclose(const.frame['u'][0], 640))
        for kwargs in ({'input_mode': 'constant'}, {'input_mode': 'gaussian'}):
            with self.assertRaises(ValueError):
                simulate(spec, 3, **kwargs)
        with self.assertRaises(ValueError):
            simulate(spec, -1)
        with self.assertRaises(ValueError):
            simulate(spec.with_observers(spec.observers[:1]), 3)


if __name__ == '__main__':
    unittest.main()
