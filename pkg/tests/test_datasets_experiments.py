import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from apps.deepnewton.datasets import TASKS, gen_poly_dataset, split_dataset
from apps.deepnewton.experiments import (METHODS, compare_methods, eval_mse, sweep, sweep_errors)
from apps.deepnewton.network import DeepNewtonNet
from parsers.poly_text import parse_poly
from shared.errors import DatasetError
from shared.schemas import DeepNewtonConfig


def test_sqrt_task_range():
    ds = gen_poly_dataset("sqrt", 3, seed=0)
    assert len(ds) == 3
    for system in ds.systems:
        c = system.coeffs[0]
        assert c[2] == 1.0 and c[1] == 0.0
        assert 0.25 <= -c[0] <= 4.0


def test_fifth_task_single_real_root():
    ds = gen_poly_dataset("fifth", 5, seed=0)
    for system, roots in zip(ds.systems, ds.roots):
        s = -system.coeffs[0, 0]
        assert 0.1 <= s <= 2.0
        assert len(roots) == 1
        assert abs(roots.roots[0, 0] - s ** 0.2) < 1e-9


@pytest.mark.parametrize("task", TASKS)
def test_every_system_has_a_root(task):
    ds = gen_poly_dataset(task, 20, seed=5)
    assert all(len(r) >= 1 for r in ds.roots)
    assert all(s.d == (2 if task == "poly2d" else 1) for s in ds.systems)


def test_generation_is_deterministic():
    a = gen_poly_dataset("poly1d", 10, seed=9)
    b = gen_poly_dataset("poly1d", 10, seed=9)
    c = gen_poly_dataset("poly1d", 10, seed=10)
    for sa, sb in zip(a.systems, b.systems):
        assert_array_equal(sa.coeffs, sb.coeffs)
    assert not np.array_equal(a.systems[0].coeffs, c.systems[0].coeffs)


def test_poly2d_total_degree_at_most_two():
    for system in gen_poly_dataset("poly2d", 10, seed=0).systems:
        assert system.degree() <= 2


def test_bad_task_and_count():
    with pytest.raises(DatasetError):
        gen_poly_dataset("cubic", 3, seed=0)
    with pytest.raises(DatasetError):
        gen_poly_dataset("sqrt", -1, seed=0)
    assert len(gen_poly_dataset("sqrt", 0, seed=0)) == 0


def test_split_is_a_partition():
    ds = gen_poly_dataset("sqrt", 10, seed=0)
    train, test = split_dataset(ds, 0.8, seed=1)
    assert (len(train), len(test)) == (8, 2)
    keys = {float(s.coeffs[0, 0]) for s in train.systems} | {float(s.coeffs[0, 0]) for s in test.systems}
    assert len(keys) == 10
    again, _ = split_dataset(ds, 0.8, seed=1)
    assert [s.text for s in again.systems] == [s.text for s in train.systems]


def test_eval_mse_exact_roots():
    ds = gen_poly_dataset("sqrt", 5, seed=0)
    x = np.array([r.roots[0] for r in ds.roots])
    row = eval_mse("Newton", x, ds.systems, ds.roots)
    assert row.mse == 0.0
    assert row.residual_mse < 1e-18
    assert row.singular_frac == 0.0


def test_eval_mse_nearest_root():
    ds = gen_poly_dataset("sqrt", 1, seed=0)
    s = -ds.systems[0].coeffs[0, 0]
    row = eval_mse("Newton", np.array([[-np.sqrt(s) - 0.5]]), ds.systems, ds.roots)
    assert abs(row.mse - 0.25) < 1e-9


def test_eval_mse_rejects_empty():
    with pytest.raises(ValueError):
        eval_mse("Newton", np.zeros((0, 1)), [], [])


def _baseline(**kw):
    return DeepNewtonNet.init_baseline(DeepNewtonConfig(layers=3, x0_mode="constant", x0=0.5, **kw))


def test_compare_methods_baseline_matches_newton_ls():
    ds = gen_poly_dataset("sqrt", 50, seed=0)
    rows = compare_methods(_baseline(), ds)
    assert [r.method for r in rows] == list(METHODS)
    by = {r.method: r for r in rows}
    assert by["DeepNewton-LS"].mse == by["Newton-LS"].mse
    assert by["Newton-LS"].mse <= by["Newton"].mse
    assert not math.isnan(by["Newton"].reference)
    assert set(rows[0].as_dict()) == {"method", "mse", "residual_mse", "singular_frac", "reference"}


def test_sweep_rows_and_truth():
    template = parse_poly("x^5 - S")
    rows = sweep(_baseline(), template, 0.1, 2.0, 100)
    assert len(rows) == 101
    assert rows[0].s == 0.1 and rows[-1].s == 2.0
    assert all(r.x_deepnewton == r.x_newton_ls for r in rows)
    assert all(abs(r.truth - r.s ** 0.2) < 1e-9 for r in rows)
    assert list(rows[0].as_dict()) == ["S", "x_Newton", "x_NewtonLS", "x_DeepNewton", "truth"]
    errors = sweep_errors(rows)
    assert errors["Newton-LS"] == errors["DeepNewton-LS"]

    far = sweep(_baseline(), template, 1.0, 32.0, 1)
    assert abs(far[-1].truth - 2.0) < 1e-9


def test_sweep_validates_template():
    with pytest.raises(ValueError):
        sweep(_baseline(), parse_poly("x^2 - 2"), 0.1, 2.0, 10)
    with pytest.raises(ValueError):
        sweep(_baseline(), parse_poly("x^2 - S"), 0.1, 2.0, 0)
