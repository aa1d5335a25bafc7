import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from apps.deepnewton.polysys import (PolyBatch, cauchy_radius, eval_F, eval_J, newton_classic, newton_ls,
                                     npoly_eval, residual_sq, roots_oracle, select_candidate, stack_systems)
from parsers.poly_text import parse_poly
from shared import ops
from shared.autodiff import Graph
from shared.errors import ShapeError
from shared.schemas import PolySystem


def _F(system, x):
    g = Graph()
    return g.value(eval_F(g, g.constant(np.atleast_2d(x)), system))[0]


def _J(system, x):
    g = Graph()
    return g.value(eval_J(g, g.constant(np.atleast_2d(x)), system))[0]


def test_eval_F_examples():
    assert_array_equal(_F(parse_poly("x^2 + 1"), [2.0]), [5.0])
    s = 1.7
    root = s ** 0.2
    assert abs(_F(parse_poly("x^5 - S").substitute(s), [root])[0]) < 1e-12


def test_horner_matches_naive_power_sum(rng):
    for _ in range(1000):
        c = rng.uniform(-1, 1, size=7)
        x = rng.uniform(-1.5, 1.5)
        naive = sum(c[i] * x ** i for i in range(7))
        out = _F(PolySystem(1, [c]), [x])[0]
        assert abs(out - naive) <= 1e-12 * max(1.0, abs(naive))


def test_horner_2d_matches_naive(rng):
    for _ in range(100):
        c = rng.uniform(-1, 1, size=(2, 4, 4))
        x, y = rng.uniform(-1.5, 1.5, size=2)
        naive = [sum(c[j, i, k] * x ** i * y ** k for i in range(4) for k in range(4)) for j in range(2)]
        assert_allclose(_F(PolySystem(2, c), [x, y]), naive, rtol=1e-12, atol=1e-12)


def test_batched_eval_matches_numpy(rng):
    systems = [PolySystem(1, [rng.uniform(-1, 1, size=int(rng.integers(2, 8)))]) for _ in range(20)]
    batch = stack_systems(systems)
    x = rng.uniform(-2, 2, size=(20, 1))
    g = Graph()
    assert_allclose(g.value(eval_F(g, g.constant(x), batch)), npoly_eval(batch, x), rtol=1e-12, atol=1e-12)


def test_eval_J_examples(rng):
    assert_array_equal(_J(parse_poly("x^2 - 2"), [3.0]), [[6.0]])
    assert_array_equal(_J(PolySystem(1, [[4.0]]), [3.0]), [[0.0]])

    system = parse_poly("x^2*y - 3*y + 1; x^3 + y^2 - x*y")
    p = rng.uniform(-1, 1, size=2)
    h = 1e-5
    fd = np.stack([(_F(system, p + h * e) - _F(system, p - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    assert_allclose(_J(system, p), fd, rtol=1e-6, atol=1e-8)


def test_eval_shape_check():
    g = Graph()
    with pytest.raises(ShapeError):
        eval_F(g, g.constant(np.zeros((1, 2))), parse_poly("x^2 - 2"))


def test_stack_systems_pads_and_rejects_placeholder():
    batch = stack_systems([parse_poly("x - 1"), parse_poly("x^3 - 2")])
    assert isinstance(batch, PolyBatch)
    assert batch.coeffs.shape == (2, 1, 4)
    with pytest.raises(ValueError):
        stack_systems([parse_poly("x^2 - S")])
    with pytest.raises(ShapeError):
        stack_systems([parse_poly("x - 1"), parse_poly("x - y; y")])


def test_newton_classic_hand_steps():
    system = parse_poly("x^2 - 2")
    assert newton_classic(system, x0=1.0, iters=1).value[0, 0] == 1.5
    assert abs(newton_classic(system, x0=1.0, iters=2).value[0, 0] - 17.0 / 12.0) < 1e-15


def test_newton_classic_flags_singular_start():
    run = newton_classic(parse_poly("x^2 - 2"), x0=0.0, iters=3)
    assert run.steps[0][0]
    assert run.singular[0]
    assert run.value[0, 0] == 0.0


def test_newton_classic_zero_iterations():
    run = newton_classic(parse_poly("x^2 - 2"), x0=0.7, iters=0)
    assert run.value[0, 0] == 0.7
    assert not run.singular[0]


def test_newton_classic_settle_keeps_converged_systems():
    batch = stack_systems([parse_poly("x - 1"), parse_poly("x^2 - 2")])
    run = newton_classic(batch, x0=1.0, iters=3, tol=1e-12)
    assert run.value[0, 0] == 1.0
    assert abs(run.value[1, 0] - np.sqrt(2)) < 1e-5


def test_newton_2d_converges():
    system = parse_poly("x^2 + y^2 - 4; x - y")
    run = newton_classic(system, x0=[1.0, 1.2], iters=8)
    assert_allclose(run.value[0], [np.sqrt(2), np.sqrt(2)], atol=1e-10)


def test_newton_requires_square_system():
    with pytest.raises(ShapeError):
        newton_classic(parse_poly("x - 1; x + 1"), iters=1)


def test_newton_ls_candidates_by_hand():
    system = parse_poly("x^2 - 2")
    g = Graph()
    x = g.constant([[1.0]])
    cands = [g.constant([[v]]) for v in (1.25, 1.5, 1.75)]
    res = [g.value(residual_sq(g, c, system))[0] for c in cands]
    assert_allclose(res, [0.4375 ** 2, 0.25 ** 2, 1.0625 ** 2])
    _, best, idx = select_candidate(g, cands, system)
    assert idx[0] == 1
    run = newton_ls(system, x0=1.0, iters=1)
    assert run.value[0, 0] == 1.5
    assert run.selected[0][0] == 1


def test_newton_ls_singleton_equals_classic(rng):
    systems = [PolySystem(1, [rng.uniform(-1, 1, size=5)]) for _ in range(30)]
    batch = stack_systems(systems)
    ls = newton_ls(batch, x0=0.3, iters=3, alphas=[1.0]).value
    classic = newton_classic(batch, x0=0.3, iters=3).value
    assert_array_equal(ls, classic)


def test_newton_ls_never_worse_than_unit_step(rng):
    systems = [parse_poly("x^2 - S").substitute(s) for s in rng.uniform(0.25, 4, size=50)]
    batch = stack_systems(systems)
    x = np.full((50, 1), 0.5)
    for _ in range(3):
        ls = newton_ls(batch, x0=x, iters=1).value
        unit = newton_classic(batch, x0=x, iters=1).value
        assert np.all(npoly_eval(batch, ls) ** 2 <= npoly_eval(batch, unit) ** 2)
        x = ls


def test_newton_ls_ties_pick_smallest_alpha():
    # x - 1 from x0 = 1: every step length leaves x at the root
    run = newton_ls(parse_poly("x - 1"), x0=1.0, iters=1, alphas=[1.5, 0.5, 1.0])
    assert run.selected[0][0] == 0


def test_newton_ls_rejects_empty_alphas():
    with pytest.raises(ValueError):
        newton_ls(parse_poly("x - 1"), alphas=[])


def test_roots_oracle_examples():
    assert_allclose(roots_oracle(parse_poly("x^2 - 4")).roots[:, 0], [-2.0, 2.0], atol=1e-10)
    assert len(roots_oracle(parse_poly("x^2 + 1"))) == 0
    roots = roots_oracle(parse_poly("x^5 - 2")).roots
    assert roots.shape == (1, 1)
    assert abs(roots[0, 0] - 2 ** 0.2) < 1e-9
    assert abs(roots[0, 0] - 1.148698) < 1e-6


def test_roots_oracle_double_root():
    roots = roots_oracle(parse_poly("x^2 - 2x + 1")).roots
    assert roots.shape == (1, 1)
    assert abs(roots[0, 0] - 1.0) < 1e-4


def test_roots_oracle_invariants(rng):
    for _ in range(20):
        system = PolySystem(1, [rng.uniform(-1, 1, size=7)])
        rs = roots_oracle(system)
        for r in rs.roots:
            assert abs(npoly_eval(stack_systems([system]), r[None])[0, 0]) < 1e-9
        diffs = np.abs(np.subtract.outer(rs.roots[:, 0], rs.roots[:, 0]))
        assert np.all(diffs[~np.eye(len(rs), dtype=bool)] > 1e-6)
        assert_array_equal(roots_oracle(system).roots, rs.roots)


def test_roots_oracle_2d():
    rs = roots_oracle(parse_poly("x^2 + y^2 - 4; x - y"))
    expected = np.array([[-np.sqrt(2), -np.sqrt(2)], [np.sqrt(2), np.sqrt(2)]])
    assert_allclose(rs.roots, expected, atol=1e-9)


def test_roots_oracle_rejects_placeholder():
    with pytest.raises(ValueError):
        roots_oracle(parse_poly("x^2 - S"))


def test_cauchy_radius():
    assert cauchy_radius(np.array([-4.0, 0.0, 1.0])) == 5.0
    assert cauchy_radius(np.array([3.0])) == 0.0


def test_masked_newton_direction_is_zero_on_singular(rng):
    from apps.deepnewton.polysys import newton_direction
    g = Graph()
    batch = stack_systems([parse_poly("x^2 - 2"), parse_poly("x^2 - 3")])
    nd = newton_direction(g, g.constant([[0.0], [1.0]]), batch)
    assert_array_equal(nd.ok, [False, True])
    assert g.value(nd.direction)[0, 0] == 0.0
    assert g.value(nd.direction)[1, 0] == -1.0
    assert g.value(ops.sum_(g, nd.F)) == -2.0 + -2.0
