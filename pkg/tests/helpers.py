"""Random controllers shared by the property tests."""

from fractions import Fraction

from pycredible.Spec import ControllerSpec, InputSpec, ObserverSpec, P_FORM, Q_FORM


def random_entry(rng):
    # zeros, unit gains, terminating decimals and a few non-terminating rationals
    return rng.choice([Fraction(0), Fraction(0), Fraction(1), Fraction(-1),
                       Fraction(rng.randint(-999, 999), 100),
                       Fraction(rng.randint(-9, 9), 7)])


def random_matrix(rng, rows, cols):
    return [[random_entry(rng) for _ in range(cols)] for _ in range(rows)]


def random_spec(rng, name='ctrl', observers=True, plain_inputs=False):
    """
    Controller with n, m, k <= 4. With ``observers`` every input is a
    reference input bounded by its own assertive observer, so the program
    can be annotated and propagated.
    """
    n, m, k = rng.randint(1, 4), rng.randint(0 if not observers else 1, 4), rng.randint(1, 4)
    inputs = []
    for j in range(m):
        if plain_inputs and not observers and rng.random() < 0.5:
            inputs.append(InputSpec(f'r{j + 1}'))
        else:
            inputs.append(InputSpec(f'e{j + 1}', f'y{j + 1}', f'yd{j + 1}'))
    states = [f'I{i + 1}' for i in range(n)]

    obs = []
    if observers:
        p = [[Fraction(rng.randint(1, 9), 10) if i == j else Fraction(0) for j in range(n)]
             for i in range(n)]
        obs.append(ObserverSpec('Stability', states, P_FORM, p, Fraction(1, 2)))
        for j, inp in enumerate(inputs):
            obs.append(ObserverSpec(f'Bound{j + 1}', [inp.name], Q_FORM,
                                    [[Fraction(rng.randint(1, 8), 4)]], Fraction(1, 2 * m)))
    x0 = [Fraction(0)] * n
    return ControllerSpec(name, random_matrix(rng, n, n), random_matrix(rng, n, m),
                          random_matrix(rng, k, n), random_matrix(rng, k, m), states, inputs,
                          [f'u{i + 1}' for i in range(k)], x0, obs)


def random_raw_inputs(rng, spec):
    return {s: Fraction(rng.randint(-500, 500), rng.choice([1, 3, 10, 100]))
            for s in spec.io_inputs}
