import re
import json
import random
import unittest
from dataclasses import replace
from fractions import Fraction

import numpy as np

from pycredible.Linalg import RationalMatrix, PROVEN_PSD, PROVEN_NOT_PSD, UNKNOWN, block_diag
from pycredible.Spec import Ellipsoid, ObserverSpec, P_FORM, Q_FORM, load_fixture
from pycredible.Codegen import (AffineAssignment, lower, emit_c, AFFINE_ELLIPSOID, REDUCE_ELLIPSOID,
                               SPROCEDURE, DEFAULT_SPLIT)
from pycredible.Annotation import annotate
from pycredible.Propagation import affine_update, propagate
from pycredible.Checker import (GrammarError, PROVEN, REFUTED, parse_annotated_c,
                                check_affine_triple, check_sproc_triple, check_final_containment,
                                check_initial_state, check_artifact)

from helpers import random_spec


QMAT_0 = [['1484.8760396857954', '-25.780980284188082'],
          ['-25.780980284188082', '406.11067541120576']]
QMAT_24 = [[3353.385756854045, -36.73496680142199],
           [-36.73496680142199, 406.10904154688274]]

HAND_WRITTEN = '''/* halving filter, written by hand */
typedef struct {
  double y;
} t_half_io;

typedef struct {
  double s;
} t_half_state;

/*@ logic matrix QMat_0 = mat_of_1x1_scalar(4); */
/*@ logic matrix PMat_0 = mat_of_1x1_scalar(0.25); */
/*@ logic matrix QMat_1 = mat_of_1x1_scalar(POST); */

void half_init(t_half_state *_state_) {
  _state_->s = 0.5;
}

/*@ requires in_ellipsoid(PMat_0,vect_of_1_scalar(_state_->s));
  @ requires \\valid(_io_) && \\valid(_state_);
  @ ensures in_ellipsoidQ(QMat_0,vect_of_1_scalar(_state_->s));
  @*/
void half_compute(t_half_io *_io_, t_half_state *_state_) {
  {
    _io_->y = _state_->s; // plain block, no behavior
  }
  /*@ behavior halve:
    @ requires in_ellipsoidQ(QMat_0,VECTOR);
    @ ensures in_ellipsoidQ(QMat_1,vect_of_1_scalar(_state_->s));
    @ PROOF_TACTIC (use_strategy (TACTIC));
    @*/
  {
    _state_->s = 0.5 * _state_->s;
  }
}
'''


def _hand_written(post='1', vector='vect_of_1_scalar(_state_->s)', tactic='AffineEllipsoid'):
    return HAND_WRITTEN.replace('POST', post).replace('VECTOR', vector).replace('(TACTIC)', f'({tactic})')


def _emitted(spec):
    program = lower(spec)
    result = propagate(annotate(program, spec.observers))
    return emit_c(program, result.annotated), program, result


def _verdicts(report):
    final = report.final_containment.status if report.final_containment else None
    return tuple(t.verdict for t in report.triples), final, report.initial_state[0]


class TestParse(unittest.TestCase):

    def test_round_trip_running_example(self):
        text, program, result = _emitted(load_fixture('running_example'))
        parsed = parse_annotated_c(text)
        self.assertEqual(parsed.program, program)
        self.assertTrue(parsed.has_init)
        self.assertEqual(parsed.matrices['QMat_0'], result.annotated.contract.pre.matrix)
        self.assert_same_triples(parsed.triples, result.annotated.triples)

    def test_round_trip_random(self):
        rng = random.Random(31)
        for s in range(20):
            text, program, result = _emitted(random_spec(rng, name=f'c{s}'))
            parsed = parse_annotated_c(text)
            self.assertEqual(parsed.program, program)
            self.assert_same_triples(parsed.triples, result.annotated.triples)
            report = check_artifact(parsed)
            self.assertEqual(report.counts()[REFUTED], 0, s)
            self.assertEqual(report.counts()[UNKNOWN], 0, s)

    def assert_same_triples(self, parsed, generated):
        self.assertEqual(len(parsed), len(generated))
        for p, g in zip(parsed, generated):
            self.assertEqual(p.label, g.label)
            self.assertEqual(p.tactic, g.tactic)
            self.assertEqual(p.assumed, g.assumed)
            self.assertEqual(p.is_skip, g.is_skip)
            self.assertEqual([q.variables for q in p.pre], [e.support for e in g.pre])
            self.assertEqual([q.matrix for q in p.pre], [e.matrix for e in g.pre])
            self.assertEqual(p.post.variables, g.post.support)
            self.assertEqual(p.post.matrix, g.post.matrix)

    def test_hand_written(self):
        parsed = parse_annotated_c(_hand_written())
        self.assertEqual(parsed.program.input_vars, ())
        self.assertEqual(parsed.program.output_vars, ('y',))
        self.assertEqual(parsed.program.x0, (Fraction(1, 2),))
        self.assertEqual(len(parsed.blocks), 2)
        pre, post = parsed.contract
        self.assertEqual(pre.form, P_FORM)
        self.assertEqual(pre.matrix, RationalMatrix([[4]]))
        self.assertTrue(pre.same_set(post))
        (triple,) = parsed.triples
        self.assertEqual((triple.label, triple.position, triple.line), ('halve', 1, 26))

    def test_errors(self):
        cases = (('', 1),
                 ('   \n\n', 1),
                 (_hand_written(vector='vect_of_2_scalar(_state_->s)'), 27),
                 (_hand_written(vector='vect_of_1_scalar(_state_->s,_io_->y)'), 27),
                 (_hand_written(tactic='Magic'), 29),
                 (_hand_written().replace('QMat_1,', 'QMat_9,'), 28),
                 (_hand_written().replace('mat_of_1x1_scalar(4)', 'mat_of_1x2_scalar(4)'), 10),
                 (_hand_written().replace('mat_of_1x1_scalar(4)', 'mat_inv(QMat_1)'), 10),
                 (_hand_written().replace('0.25', '0'), 18),
                 (_hand_written().replace('_io_->y = ', '_io_->y = $'), 24))
        for text, line in cases:
            with self.assertRaises(GrammarError) as ctx:
                parse_annotated_c(text)
            if line:
                self.assertEqual(ctx.exception.line, line, ctx.exception)

        # everything up to the contract: structs, matrices and init only
        with self.assertRaises(GrammarError) as ctx:
            parse_annotated_c(_hand_written().split('/*@ requires')[0])
        self.assertEqual(ctx.exception.message, 'No compute function')

    def test_no_contract(self):
        text = emit_c(lower(load_fixture('running_example')))
        parsed = parse_annotated_c(text)
        self.assertIsNone(parsed.contract)
        self.assertEqual(parsed.triples, ())
        with self.assertRaises(GrammarError):
            check_artifact(parsed)


class TestTripleChecks(unittest.TestCase):

    def setUp(self):
        text, _, _ = _emitted(load_fixture('running_example'))
        self.triples = parse_annotated_c(text).triples

    def test_running_example(self):
        for t in self.triples:
            check = check_sproc_triple if t.tactic == SPROCEDURE else check_affine_triple
            verdict = check(t)
            self.assertEqual(verdict.verdict, PROVEN, (t.label, verdict.detail))
        self.assertEqual(check_affine_triple(self.triples[6]).rule, REDUCE_ELLIPSOID)
        self.assertEqual(check_affine_triple(self.triples[0]).detail, 'post equals M Q M^T')

    def test_sprocedure(self):
        sproc = self.triples[4]
        verdict = check_sproc_triple(sproc)
        self.assertEqual(verdict.multipliers, (Fraction(9991, 10000), Fraction(9, 10000)))
        self.assertEqual(verdict.detail, 'multipliers (0.9991, 0.0009)')

        scaled = block_diag(sproc.pre[0].matrix * 2, sproc.pre[1].matrix * 3)
        verdict = check_sproc_triple(replace(sproc, post=replace(sproc.post, matrix=scaled)))
        self.assertEqual(verdict.verdict, REFUTED)
        self.assertEqual(verdict.multipliers, (Fraction(1, 2), Fraction(1, 3)))
        self.assertIn('sum to 5/6', verdict.detail)

        self.assertEqual(check_sproc_triple(replace(sproc, tactic=AFFINE_ELLIPSOID)).verdict,
                         REFUTED)
        self.assertEqual(check_sproc_triple(replace(sproc, pre=sproc.pre[:1],
                                                    assumed=(False,))).verdict, REFUTED)

    def test_perturbed_affine(self):
        t = self.triples[0]
        rows = t.post.matrix.tolist()
        rows[0][0] -= 1
        verdict = check_affine_triple(replace(t, post=replace(t.post,
                                                              matrix=RationalMatrix(rows))))
        self.assertEqual(verdict.verdict, REFUTED)
        self.assertEqual(verdict.rule, AFFINE_ELLIPSOID)
        self.assertIn('1 entry differ: (0,0)', verdict.detail)
        self.assertEqual(verdict.discrepancy[0, 0], -1)

        self.assertEqual(check_affine_triple(replace(t, tactic=SPROCEDURE)).verdict, REFUTED)

    def test_hand_written_posts(self):
        cases = (('1', PROVEN, 'post equals M Q M^T'),
                 ('2', PROVEN, 'proven by containment'),
                 ('0.5', REFUTED, 'post differs'))
        for post, verdict, detail in cases:
            (t,) = parse_annotated_c(_hand_written(post=post)).triples
            got = check_affine_triple(t)
            self.assertEqual(got.verdict, verdict, post)
            self.assertIn(detail, got.detail)

    def test_constant_term(self):
        text = _hand_written(post='4').replace('0.5 * _state_->s;', '0.5 * _state_->s + 1;')
        (t,) = parse_annotated_c(text).triples
        self.assertEqual(t.stmt.constant, 1)
        got = check_affine_triple(t)
        self.assertEqual(got.verdict, PROVEN)
        self.assertEqual(got.detail, 'post equals M Q M^T')
        # same split as the propagation rule
        image = affine_update(Ellipsoid(Q_FORM, [[4]], ['s']),
                              AffineAssignment('s', {'s': '0.5'}, 1))
        self.assertEqual(image.matrix, RationalMatrix([[4]]))
        self.assertEqual(DEFAULT_SPLIT, Fraction(1, 2))


class TestFinalContainment(unittest.TestCase):

    def test_golden(self):
        q0 = RationalMatrix(QMAT_0)
        cases = ((np.array(QMAT_24), np.array(q0.to_float()), PROVEN_NOT_PSD),
                 (q0, q0, PROVEN_PSD),
                 (q0 * Fraction(9, 10), q0, PROVEN_PSD),
                 (q0, q0 * Fraction(9, 10), PROVEN_NOT_PSD))
        for gen, decl, status in cases:
            self.assertEqual(check_final_containment(gen, decl).status, status)

    def test_errors(self):
        q = RationalMatrix([[1]])
        with self.assertRaises(ValueError):
            check_final_containment(q, q, ['a'], ['b'])
        with self.assertRaises(ValueError):
            check_final_containment(q, RationalMatrix.identity(2))

    def test_initial_state(self):
        pre = parse_annotated_c(_hand_written()).contract[0]
        cases = (({'s': 0}, PROVEN), ({'s': 2}, PROVEN), ({'s': Fraction(201, 100)}, REFUTED),
                 ({}, UNKNOWN))
        for x0, verdict in cases:
            self.assertEqual(check_initial_state(pre, x0)[0], verdict, x0)


class TestArtifact(unittest.TestCase):

    def check_fixture(self, name):
        text, _, _ = _emitted(load_fixture(name))
        return check_artifact(parse_annotated_c(text))

    def test_certified(self):
        report = self.check_fixture('running_example_certified')
        self.assertEqual(report.overall, PROVEN)
        self.assertEqual(report.counts(), {PROVEN: 22, REFUTED: 0, UNKNOWN: 0})
        self.assertEqual(report.final_containment.status, PROVEN_PSD)
        self.assertEqual(report.initial_state[0], PROVEN)

    def test_running_example(self):
        report = self.check_fixture('running_example')
        self.assertEqual(report.counts()[PROVEN], 22)
        self.assertEqual(report.final_containment.status, PROVEN_NOT_PSD)
        self.assertEqual(report.overall, REFUTED)

    def test_flipped(self):
        report = self.check_fixture('running_example_flipped')
        self.assertTrue(all(t.verdict == PROVEN for t in report.triples))
        self.assertEqual(report.final_containment.status, PROVEN_NOT_PSD)
        self.assertEqual(report.overall, REFUTED)

    def test_tampered_multiplier(self):
        text, _, _ = _emitted(load_fixture('running_example'))
        text = text.replace('(1/0.0009)', '(1/0.0008)')
        report = check_artifact(parse_annotated_c(text))
        verdicts = [t.verdict for t in report.triples]
        self.assertEqual(verdicts.count(REFUTED), 1)
        self.assertEqual(report.triples[4].label, 'ellipsoid5_0')
        self.assertEqual(report.triples[4].verdict, REFUTED)
        self.assertEqual(verdicts[:4], [PROVEN] * 4)
        self.assertEqual(verdicts[5:], [UNKNOWN] * 17)
        self.assertIsNone(report.final_containment)
        self.assertEqual(report.overall, REFUTED)

    def test_hand_written(self):
        report = check_artifact(parse_annotated_c(_hand_written()))
        self.assertEqual(report.overall, PROVEN)
        self.assertEqual(report.final_detail, 'QMat_1 within QMat_0')
        self.assertEqual(report.float_check.status, PROVEN_PSD)

        broken = _hand_written().replace('requires in_ellipsoidQ(QMat_0,',
                                         'requires in_ellipsoidQ(QMat_1,')
        report = check_artifact(parse_annotated_c(broken))
        self.assertEqual(report.triples[0].verdict, UNKNOWN)
        self.assertEqual(report.overall, UNKNOWN)

    def test_report(self):
        report = self.check_fixture('running_example_certified')
        data = json.loads(report.to_json())
        self.assertEqual(list(data), ['name', 'overall', 'triples', 'counts', 'final_containment',
                                      'initial_state', 'assumptions', 'float_check', 'lmi_check',
                                      'epsilon', 'seed', 'tool_version'])
        (assumption,) = data['assumptions']
        self.assertEqual((assumption['label'], assumption['variables']), ('ellipsoid4_0', ['Sum4']))
        self.assertRegex(assumption['matrix'], r'QMat_\d+\Z')
        self.assertEqual(data['name'], 'running_example_certified')
        self.assertEqual(data['overall'], PROVEN)
        self.assertEqual(data['triples'][4]['multipliers'], ['2499/2500', '1/2500'])
        self.assertEqual(data['final_containment']['verdict'], PROVEN_PSD)

    def test_assumption_over_states(self):
        # an empty block that assumes the declared postcondition over the states
        states = 'vect_of_2_scalar(_state_->Integrator_1_memory,_state_->Integrator_2_memory)'
        behavior = (f'  /*@ behavior forged:\n'
                    f'    @ assumes in_ellipsoidQ(QMat_1,{states});\n'
                    f'    @ ensures in_ellipsoidQ(QMat_1,{states});\n'
                    f'    @ PROOF_TACTIC (use_strategy (AffineEllipsoid));\n'
                    f'    @*/\n'
                    f'  {{\n  }}\n')
        cases = (('running_example_flipped', REFUTED), ('running_example_certified', UNKNOWN))
        for name, overall in cases:
            text, _, _ = _emitted(load_fixture(name))
            head, _, tail = text.rpartition('}')
            report = check_artifact(parse_annotated_c(head + behavior + '}' + tail))
            self.assertEqual(report.counts(), {PROVEN: 22, REFUTED: 0, UNKNOWN: 1}, name)
            forged = report.triples[-1]
            self.assertEqual((forged.label, forged.verdict), ('forged', UNKNOWN))
            self.assertIn('mentions state variable(s)', forged.detail)
            self.assertEqual([a.label for a in report.assumptions], ['ellipsoid4_0'])
            self.assertEqual(report.overall, overall, name)

    def test_point_input_bound(self):
        # a zero Q-form bound: the input is the single point 0
        spec = load_fixture('running_example_certified')
        stability, bound = spec.observers
        point = ObserverSpec(bound.label, bound.variables, Q_FORM, [['0']], bound.mu)
        text, _, _ = _emitted(spec.with_observers([stability, point]))
        report = check_artifact(parse_annotated_c(text))
        sproc = report.triples[4]
        self.assertEqual((sproc.rule, sproc.verdict), (SPROCEDURE, PROVEN))
        self.assertEqual(sproc.multipliers, (Fraction(2499, 2500), Fraction(1, 2500)))
        self.assertEqual(report.counts(), {PROVEN: 22, REFUTED: 0, UNKNOWN: 0})
        self.assertEqual(report.overall, PROVEN)

    def test_point_sets_in_sprocedure(self):
        text, _, _ = _emitted(load_fixture('running_example_certified'))
        sproc = parse_annotated_c(text).triples[4]
        first, second = sproc.pre
        flat = replace(second, matrix=second.matrix * 0)
        cases = ((block_diag(first.matrix * 2, second.matrix * 0), PROVEN, (Fraction(1, 2),) * 2),
                 (block_diag(first.matrix, second.matrix * 0), REFUTED, (Fraction(1),)),
                 (block_diag(first.matrix * 2, second.matrix), REFUTED, ()))
        for post, verdict, multipliers in cases:
            got = check_sproc_triple(replace(sproc, pre=(first, flat),
                                             post=replace(sproc.post, matrix=post)))
            self.assertEqual(got.verdict, verdict, got.detail)
            self.assertEqual(got.multipliers, multipliers)

    def test_single_entry_tamper(self):
        text, _, _ = _emitted(load_fixture('running_example_certified'))
        honest = check_artifact(parse_annotated_c(text))
        literal = re.compile(r'^(/\*@ logic matrix QMat_\d+ = mat_of_\d+x\d+_scalar\()'
                             r'(.*)(\); \*/)$', re.M)
        tampered = 0
        for mo in literal.finditer(text):
            entries = mo.group(2).split(',')
            for i, entry in enumerate(entries):
                if re.fullmatch(r'-?0\.0', entry):
                    changed = '1.0'
                else:
                    changed = entry[1:] if entry.startswith('-') else f'-{entry}'
                line = mo.group(1) + ','.join(entries[:i] + [changed] + entries[i + 1:]) + \
                    mo.group(3)
                report = check_artifact(parse_annotated_c(text.replace(mo.group(0), line)))
                self.assertNotEqual(_verdicts(report), _verdicts(honest), line)
                tampered += 1
        self.assertGreaterEqual(tampered, 13)


if __name__ == '__main__':
    unittest.main()
