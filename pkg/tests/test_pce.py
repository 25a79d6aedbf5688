import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb, ndtri
from sklearn.linear_model import lars_path

from lrauq.lsq import solve_ols
from lrauq.pce import (BasisTooLargeError, PceConfig, PceModel, fit_pce_ols, hybrid_lar,
                       hyperbolic_index_set, lar_order, loo_error, select_pce)
from lrauq.polybasis import PolyFamily, design_matrix
from lrauq.probcore import ExperimentalDesign, sobol_design

H = PolyFamily.HERMITE


def _sobol_ed(fn, dim, n):
    u = ndtri(sobol_design(dim, n))
    return ExperimentalDesign(u, fn(u))


def _enumerate(dim, pt, q):
    # brute-force oracle over the full tensor grid
    return sorted(a for a in itertools.product(range(pt + 1), repeat=dim)
                  if sum(k**q for k in a) ** (1 / q) <= pt + 1e-9)


def test_index_set_examples():
    assert len(hyperbolic_index_set(10, 3, 1.0)) == 286
    assert hyperbolic_index_set(4, 0) == [(0, 0, 0, 0)]
    assert hyperbolic_index_set(2, 2, 1.0) == sorted([(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)])


@pytest.mark.parametrize("dim,pt,q", [(2, 4, 0.5), (3, 3, 0.75), (4, 3, 0.25), (3, 5, 0.6)])
def test_index_set_matches_enumeration(dim, pt, q):
    assert hyperbolic_index_set(dim, pt, q) == _enumerate(dim, pt, q)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10))
def test_total_degree_cardinality(dim, pt):
    if comb(dim + pt, pt, exact=True) > 200_000:
        with pytest.raises(BasisTooLargeError):
            hyperbolic_index_set(dim, pt, 1.0)
        return
    assert len(hyperbolic_index_set(dim, pt, 1.0)) == comb(dim + pt, pt, exact=True)


def test_index_set_guard():
    with pytest.raises(BasisTooLargeError, match="lower pt or q"):
        hyperbolic_index_set(20, 6, 1.0, max_size=1000)
    with pytest.raises(ValueError):
        hyperbolic_index_set(2, 2, 0.0)


def test_bookkeeping_identities():
    m, p, r = 10, 3, 10
    assert (p + 1) ** m == 1_048_576
    assert (p + 1) * m * r == 400
    assert len(hyperbolic_index_set(m, 3, 1.0)) == 286


def test_ols_quadratic_projection():
    ed = _sobol_ed(lambda u: u[:, 0] ** 2 + u[:, 1], 2, 30)
    idx = hyperbolic_index_set(2, 2)
    m = fit_pce_ols(ed, idx, H)
    coef = dict(zip(map(tuple, m.indices.tolist()), m.coefficients))
    assert coef.pop((0, 0)) == pytest.approx(1.0, abs=1e-10)
    assert coef.pop((0, 1)) == pytest.approx(1.0, abs=1e-10)
    assert coef.pop((2, 0)) == pytest.approx(math.sqrt(2), abs=1e-10)
    assert all(abs(c) < 1e-10 for c in coef.values())
    assert m.predict(np.array([[1.0, 0.0]]))[0] == pytest.approx(1.0, abs=1e-10)


def test_ols_constant_and_rank_deficient():
    ed = _sobol_ed(lambda u: np.full(u.shape[0], 4.0), 3, 12)
    m = fit_pce_ols(ed, hyperbolic_index_set(3, 1), H)
    np.testing.assert_allclose(m.coefficients, [4.0, 0, 0, 0], atol=1e-12)
    small = _sobol_ed(lambda u: u.sum(axis=1), 3, 5)
    m = fit_pce_ols(small, hyperbolic_index_set(3, 2), H)
    assert any("rank-deficient" in f for f in m.info["flags"])


def _explicit_loo(a, y):
    n = y.size
    res = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        c = np.linalg.lstsq(a[keep], y[keep], rcond=None)[0]
        res[i] = y[i] - a[i] @ c
    return float(np.mean(res**2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_loo_matches_explicit_refits(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((20, 5))
    y = rng.standard_normal(20)
    res = loo_error(a, y)
    ref = _explicit_loo(a, y)
    assert res.loo == pytest.approx(ref, rel=1e-9)
    assert res.relative == pytest.approx(ref / np.var(y, ddof=1), rel=1e-9)
    assert res.loo_corrected >= res.loo


def test_loo_correction_factor():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((15, 4))
    y = rng.standard_normal(15)
    res = loo_error(a, y)
    c_emp = a.T @ a / 15
    t = 15 / (15 - 4) * (1 + np.trace(np.linalg.inv(c_emp)) / 15)
    assert res.loo_corrected == pytest.approx(res.loo * t, rel=1e-12)


def test_loo_special_cases():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((10, 3))
    assert loo_error(a, a @ [1.0, -2.0, 0.5]).loo == pytest.approx(0.0, abs=1e-20)
    sq = loo_error(rng.standard_normal((4, 4)), rng.standard_normal(4))
    assert any("interpolatory" in f for f in sq.flags)
    col = rng.standard_normal(8)
    deficient = np.column_stack([col, col, rng.standard_normal(8)])
    y = rng.standard_normal(8)
    res = loo_error(deficient, y)
    assert any("rank-deficient" in f for f in res.flags)
    assert res.loo == pytest.approx(_explicit_loo(deficient, y), rel=1e-9)


def _sparse_target(u):
    return 2.0 + 1.5 * u[:, 0] + 0.7 * (u[:, 3] ** 2 - 1) / math.sqrt(2) - 0.5 * u[:, 1] * u[:, 5]


def test_hybrid_lar_recovers_sparse_target():
    ed = _sobol_ed(_sparse_target, 10, 50)
    idx = hyperbolic_index_set(10, 3)
    m = hybrid_lar(ed, idx, H)
    got = {tuple(r): c for r, c in zip(m.indices.tolist(), m.coefficients)}
    e = np.eye(10, dtype=int)
    want = {(0,) * 10: 2.0, tuple(e[0]): 1.5, tuple(2 * e[3]): 0.7, tuple(e[1] + e[5]): -0.5}
    assert set(got) == set(want)
    for k, v in want.items():
        assert got[k] == pytest.approx(v, abs=1e-8)


def test_sparse_support_is_best_subset_on_reduced_set():
    ed = _sobol_ed(_sparse_target, 10, 50)
    idx = hyperbolic_index_set(10, 3)
    e = np.eye(10, dtype=int)
    true = [tuple(e[0]), tuple(2 * e[3]), tuple(e[1] + e[5])]
    decoys = [a for a in idx if sum(a) > 0 and a not in true][:7]
    cand = true + decoys
    a = design_matrix(H, [(0,) * 10] + cand, ed.u)
    best = min(itertools.combinations(range(1, 11), 3),
               key=lambda s: solve_ols(a[:, [0, *s]], ed.y).residual_norm)
    assert {cand[j - 1] for j in best} == set(true)
    m = hybrid_lar(ed, [(0,) * 10] + cand, H)
    assert {tuple(r) for r in m.indices.tolist()} == set(true) | {(0,) * 10}


def test_full_path_equals_ols():
    rng = np.random.default_rng(3)
    ed = _sobol_ed(lambda u: np.exp(0.3 * u[:, 0]) + np.sin(u[:, 1]) + 0.05 * rng.standard_normal(u.shape[0]),
                   2, 60)
    idx = hyperbolic_index_set(2, 2)
    a = design_matrix(H, idx, ed.u)
    order = lar_order(a, ed.y, intercept_column=0)
    assert sorted(order) == list(range(1, len(idx)))
    cols = [0] + order
    lar_coef = solve_ols(a[:, cols], ed.y).coefficients
    ols = fit_pce_ols(ed, idx, H)
    np.testing.assert_allclose(lar_coef[np.argsort(cols)], ols.coefficients, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_lar_order_matches_reference_path(seed):
    rng = np.random.default_rng(seed)
    a = np.column_stack([np.ones(40), rng.standard_normal((40, 8))])
    y = a[:, 1:4] @ rng.standard_normal(3) + 0.3 * rng.standard_normal(40)
    x = a[:, 1:] - a[:, 1:].mean(axis=0)
    x /= np.linalg.norm(x, axis=0)
    _, active, _ = lars_path(x, y - y.mean(), method="lar")
    assert lar_order(a, y, intercept_column=0) == [j + 1 for j in active]


def test_hybrid_lar_constant_and_intercept_only():
    ed = _sobol_ed(lambda u: np.full(u.shape[0], 3.0), 2, 10)
    m = hybrid_lar(ed, hyperbolic_index_set(2, 2), H)
    assert m.size == 1 and m.coefficients[0] == pytest.approx(3.0)
    ed = _sobol_ed(lambda u: u[:, 0] + u[:, 1] ** 3, 2, 20)
    m = hybrid_lar(ed, [(0, 0)], H)
    assert m.size == 1
    n = ed.size
    assert m.loo == pytest.approx((n / (n - 1)) ** 2 * (1 + 1 / n), rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_hybrid_error_not_worse_than_intercept(seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((25, 3))
    y = np.tanh(u @ rng.standard_normal(3)) + 0.1 * rng.standard_normal(25)
    ed = ExperimentalDesign(u, y)
    m = hybrid_lar(ed, hyperbolic_index_set(3, 3), H)
    assert np.mean((y - m(u)) ** 2) <= np.mean((y - y.mean()) ** 2) + 1e-14


def _parseval_setup():
    ed = _sobol_ed(lambda u: u[:, 0] ** 2 + u[:, 1] + 0.5 * u[:, 0] * u[:, 2], 3, 40)
    m = fit_pce_ols(ed, hyperbolic_index_set(3, 2), H)
    z = np.random.default_rng(0).standard_normal((10**6, 3))
    return m, np.var(z[:, 0] ** 2 + z[:, 1] + 0.5 * z[:, 0] * z[:, 2], ddof=1)


@pytest.mark.xfail(strict=True, reason="sampling error of a 1e6-point variance estimate is "
                   "about 3e-3 relative, far above 1e-6")
def test_parseval_against_sampled_variance_fixed_band():
    m, v = _parseval_setup()
    assert m.variance() == pytest.approx(v, rel=1e-6)


def test_parseval():
    m, v = _parseval_setup()
    # exact variance 2 + 1 + 0.25; the sample estimate carries about 3e-3 noise
    assert m.variance() == pytest.approx(3.25, rel=1e-10)
    assert m.variance() == pytest.approx(v, rel=0.02)
    assert m.mean() == pytest.approx(1.0, abs=1e-10)


def test_select_quadratic_target():
    ed = _sobol_ed(lambda u: 1 + u[:, 0] ** 2 - u[:, 1] * u[:, 2], 3, 40)
    m, rep = select_pce(ed, H, PceConfig(pt_grid=(1, 2, 3)))
    assert m.info["pt"] in (2, 3)
    assert m.loo < 1e-10
    z = np.random.default_rng(1).standard_normal((10**4, 3))
    y = 1 + z[:, 0] ** 2 - z[:, 1] * z[:, 2]
    assert np.mean((m(z) - y) ** 2) / np.var(y, ddof=1) < 1e-10
    assert len(rep.table) == 12


def test_select_tie_prefers_small_basis():
    ed = _sobol_ed(lambda u: np.full(u.shape[0], 1.0), 2, 10)
    m, rep = select_pce(ed, H, PceConfig(pt_grid=(1, 2), q_grid=(0.5, 1.0)))
    assert rep.selected["card"] == 3 and rep.selected["pt"] == 1


def test_select_reports_failures():
    ed = _sobol_ed(lambda u: u[:, 0], 2, 2)
    with pytest.raises(RuntimeError, match="every"):
        select_pce(ed, H, PceConfig(pt_grid=(1,), q_grid=(1.0,)))


def test_serialization_round_trip(tmp_path):
    ed = _sobol_ed(lambda u: np.exp(0.3 * u[:, 0]) * (1 + u[:, 1]), 2, 30)
    m, _ = select_pce(ed, H, PceConfig(pt_grid=(1, 2, 3)))
    p = tmp_path / "pce.json"
    p.write_text(json.dumps(m.to_dict()))
    back = PceModel.from_dict(json.loads(p.read_text()))
    pts = np.random.default_rng(0).standard_normal((50, 2))
    np.testing.assert_array_equal(back(pts), m(pts))
    assert back.info["pt"] == m.info["pt"]


def test_intercept_model_predicts_constant():
    m = PceModel([[0, 0]], [2.5], (H, H))
    np.testing.assert_array_equal(m(np.zeros((3, 2))), 2.5)
    with pytest.raises(ValueError):
        PceModel([[0, 0], [0, 0]], [1.0, 2.0], (H, H))
