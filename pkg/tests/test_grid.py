import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viscolab.errors import InvalidArgument
from viscolab.grid import (discrete_lambda1, embedding_upper_bound, estimate_embedding_constant,
                           estimate_lambda1, grid_spectrum, inner, laplacian_apply, make_grid,
                           norm, seminorm_h1, solve_shifted_laplacian)


def test_make_grid_basic():
    g = make_grid(1.0, 4)
    assert g.h == 0.25
    assert g.n_interior == 3
    np.testing.assert_allclose(g.nodes, [0.25, 0.5, 0.75])


def test_make_grid_smallest():
    g = make_grid(2.0, 2)
    assert g.h == 1.0 and g.n_interior == 1


@pytest.mark.parametrize("L,n", [(1.0, 1), (0.0, 10), (-1.0, 10), (1.0, 2.5)])
def test_make_grid_rejects(L, n):
    with pytest.raises(InvalidArgument):
        make_grid(L, n)


def test_nodes_strictly_inside():
    g = make_grid(3.0, 7)
    assert np.all(g.nodes > 0) and np.all(g.nodes < 3.0)
    assert abs(g.h * g.n_cells - g.length) <= np.spacing(g.length)


def test_laplacian_exact_on_quadratic():
    for n in (3, 10, 57):
        g = make_grid(1.0, n)
        out = laplacian_apply(g, g.sample(lambda x: x * (1 - x)))
        np.testing.assert_allclose(out, -2.0, rtol=1e-10)


def test_laplacian_sine_consistency():
    g = make_grid(1.0, 100)
    u = g.sample(lambda x: np.sin(np.pi * x))
    exact = -np.pi**2 * u
    rel = np.max(np.abs(laplacian_apply(g, u) - exact) / np.abs(exact))
    assert rel <= 2 * (np.pi * g.h) ** 2 / 12


def test_laplacian_zero_and_rejects_nonfinite():
    g = make_grid(1.0, 8)
    assert np.all(laplacian_apply(g, g.zeros()) == 0)
    bad = g.zeros()
    bad[2] = np.nan
    with pytest.raises(InvalidArgument):
        laplacian_apply(g, bad)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 60), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_laplacian_linear_and_negative(n, a, b, seed):
    g = make_grid(1.0, n)
    r = np.random.default_rng(seed)
    u, v = r.standard_normal(g.n_interior), r.standard_normal(g.n_interior)
    lhs = laplacian_apply(g, a * u + b * v)
    rhs = a * laplacian_apply(g, u) + b * laplacian_apply(g, v)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.max(np.abs(rhs))))
    assert inner(g, u, laplacian_apply(g, u)) < 0


def test_solve_scalar_case():
    g = make_grid(1.0, 2)
    np.testing.assert_allclose(solve_shifted_laplacian(g, [2.0], [10.0]), [1.0])


def test_solve_round_trip():
    g = make_grid(1.0, 40)
    w = np.cos(np.arange(g.n_interior))
    np.testing.assert_allclose(solve_shifted_laplacian(g, g.zeros(), -laplacian_apply(g, w)), w,
                               atol=1e-9)


def dense_shifted(g, d):
    n = g.n_interior
    A = (np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / g.h**2
    return A + np.diag(d)


def test_solve_matches_dense_oracle(rng):
    g = make_grid(1.0, 51)
    for _ in range(5):
        d = rng.uniform(0, 10, g.n_interior)
        rhs = rng.standard_normal(g.n_interior)
        x = solve_shifted_laplacian(g, d, rhs)
        np.testing.assert_allclose(x, np.linalg.solve(dense_shifted(g, d), rhs), atol=1e-10)
        resid = dense_shifted(g, d) @ x - rhs
        assert np.linalg.norm(resid) <= 1e-12 * np.linalg.norm(rhs) * np.linalg.cond(dense_shifted(g, d))


def test_solve_rejects_negative_diagonal():
    g = make_grid(1.0, 5)
    with pytest.raises(InvalidArgument):
        solve_shifted_laplacian(g, [1.0, -1.0, 0.0, 0.0], np.ones(4))


def test_norms_of_sine():
    errs = []
    for n in (50, 100):
        g = make_grid(1.0, n)
        u = g.sample(lambda x: np.sin(np.pi * x))
        e = [abs(norm(g, u, 2) ** 2 - 0.5), abs(seminorm_h1(g, u) ** 2 - np.pi**2 / 2),
             abs(norm(g, u, 4) ** 4 - 3 / 8)]
        assert max(e) < 10 * g.h**2
        errs.append(max(e))
    # the sampled sine is integrated exactly by the trapezoid rule; only the
    # difference quotient carries an O(h^2) error, which must shrink
    assert errs[1] < errs[0]


def test_norm_zero_homogeneity_and_bad_exponent():
    g = make_grid(1.0, 20)
    u = np.linspace(-1, 2, g.n_interior)
    for q in (1, 2, 3.5, math.inf):
        assert norm(g, g.zeros(), q) == 0
        assert norm(g, -3.0 * u, q) == pytest.approx(3.0 * norm(g, u, q), rel=1e-14)
    assert norm(g, u, math.inf) == 2.0
    with pytest.raises(InvalidArgument):
        norm(g, u, 0.5)


def test_lambda1_matches_continuum():
    for L in (1.0, 2.0):
        g = make_grid(L, 200)
        lam, info = estimate_lambda1(g)
        assert info["converged"]
        assert lam == pytest.approx((np.pi / L) ** 2, rel=1e-3)


def test_lambda1_matches_discrete_closed_form():
    g = make_grid(1.0, 64)
    lam, _ = estimate_lambda1(g)
    assert lam == pytest.approx(discrete_lambda1(g), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_discrete_poincare(seed):
    g = make_grid(1.0, 40)
    u = np.random.default_rng(seed).standard_normal(g.n_interior)
    assert discrete_lambda1(g) * norm(g, u, 2) ** 2 <= seminorm_h1(g, u) ** 2 * (1 + 1e-12)


def test_embedding_q2_is_poincare_constant():
    g = make_grid(1.0, 200)
    c, info = estimate_embedding_constant(g, 2.0)
    assert c == pytest.approx(1 / np.pi, rel=5e-3)
    assert c * math.sqrt(discrete_lambda1(g)) == pytest.approx(1.0, abs=1e-9)


def fourier_search(g, q):
    """Coarse grid search over sin(pi x) + a sin(3 pi x) + b sin(5 pi x)."""
    x = g.nodes
    s1, s3, s5 = (np.sin(k * np.pi * x) for k in (1, 3, 5))
    best = 0.0
    for a in np.linspace(-0.3, 0.3, 25):
        for b in np.linspace(-0.2, 0.2, 17):
            u = s1 + a * s3 + b * s5
            best = max(best, norm(g, u, q) / seminorm_h1(g, u))
    return best


def test_embedding_q4_against_fourier_search():
    g = make_grid(1.0, 100)
    c, info = estimate_embedding_constant(g, 4.0)
    oracle = fourier_search(g, 4.0)
    assert 0 < c < 1
    assert c >= oracle - 1e-12
    assert c == pytest.approx(oracle, rel=5e-3)
    again, _ = estimate_embedding_constant(g, 4.0)
    assert again == c


def test_embedding_grid_refinement_and_bound():
    c100, _ = estimate_embedding_constant(make_grid(1.0, 100), 4.0)
    c200, _ = estimate_embedding_constant(make_grid(1.0, 200), 4.0)
    assert abs(c100 - c200) / c200 < 0.01
    for q in (2.0, 3.0, 6.0):
        for L in (1.0, 2.5):
            c, _ = estimate_embedding_constant(make_grid(L, 80), q)
            assert c <= embedding_upper_bound(L, q) + 1e-9


def test_embedding_rejects_small_exponent():
    with pytest.raises(InvalidArgument):
        estimate_embedding_constant(make_grid(1.0, 10), 1.5)


def test_grid_spectrum_deduplicates():
    spec = grid_spectrum(make_grid(1.0, 60), [4, 4.0, 2])
    assert set(spec.c_s_for_p) == {4.0, 2.0}
    assert spec.lambda1 > 0
    assert spec.c_s(2) * math.sqrt(spec.lambda1) == pytest.approx(1.0, abs=1e-8)
