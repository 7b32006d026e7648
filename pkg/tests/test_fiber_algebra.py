import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from doubleforms.fiber_algebra import (
    Bidegree, DoubleForm, Metric, basis_enumerate, bianchi_basis, bianchi_interior_matrix,
    bianchi_matrix, bianchi_sum, bianchi_wedge_matrix, interior_product, involution,
    metric_op, product_rule_suite, project_bianchi, random_metric, relation_suite, wedge,
    wedge_matrix,
)

import oracles


def form(bd, I, J, scale=1.0):
    return DoubleForm.basis(bd, I, J) * scale


def test_basis_enumerate_examples():
    assert basis_enumerate(Bidegree(1, 1, 2)) == [((0,), (0,)), ((0,), (1,)), ((1,), (0,)), ((1,), (1,))]
    assert len(basis_enumerate(Bidegree(2, 1, 3))) == 9
    assert basis_enumerate(Bidegree(0, 0, 2)) == [((), ())]
    assert basis_enumerate(Bidegree(2, 1, 3)) == basis_enumerate(Bidegree(2, 1, 3))


def test_bidegree_rejects_out_of_range():
    with pytest.raises(ValueError):
        Bidegree(3, 0, 2)
    with pytest.raises(ValueError):
        Bidegree(0, 0, 5)


def test_wedge_coordinate_covectors():
    a = DoubleForm.basis(Bidegree(1, 0, 2), (0,), ())
    b = DoubleForm.basis(Bidegree(1, 0, 2), (1,), ())
    assert wedge(a, b).allclose(DoubleForm.basis(Bidegree(2, 0, 2), (0, 1), ()))
    rng = np.random.default_rng(1)
    xi = DoubleForm.random(Bidegree(1, 0, 3), rng)
    assert np.abs(wedge(xi, xi).coeffs).max() == 0


def test_wedge_overflow_rejected():
    a = DoubleForm.random(Bidegree(2, 0, 2), np.random.default_rng(0))
    b = DoubleForm.random(Bidegree(1, 0, 2), np.random.default_rng(1))
    with pytest.raises(ValueError):
        wedge(a, b)


@settings(max_examples=40, deadline=None)
@given(d=st.integers(2, 3), k=st.integers(0, 2), m=st.integers(0, 2), l=st.integers(0, 2),
       n=st.integers(0, 2), seed=st.integers(0, 10**6))
def test_wedge_matches_alternating_sum(d, k, m, l, n, seed):
    if k + l > d or m + n > d:
        return
    rng = np.random.default_rng(seed)
    psi = DoubleForm.random(Bidegree(k, m, d), rng)
    eta = DoubleForm.random(Bidegree(l, n, d), rng)
    A = oracles.to_tensor(psi.coeffs, d, k, m)
    B = oracles.to_tensor(eta.coeffs, d, l, n)
    expected = oracles.wedge_tensor(A, B, d, k, m, l, n)
    assert np.allclose(wedge(psi, eta).coeffs, expected, atol=1e-12)


def test_graded_commutativity_d3():
    rng = np.random.default_rng(7)
    for _ in range(20):
        psi = DoubleForm.random(Bidegree(1, 1, 3), rng)
        eta = DoubleForm.random(Bidegree(1, 0, 3), rng)
        sign = (-1) ** (1 * 1 + 1 * 0)
        assert wedge(psi, eta).allclose(sign * wedge(eta, psi))


def test_involution_examples_and_square():
    bd = Bidegree(1, 1, 2)
    assert involution(form(bd, (0,), (1,))).allclose(form(bd, (1,), (0,)))
    g = Metric(np.array([[2.0, 0.3], [0.3, 1.0]]))
    assert involution(g.as_form()).allclose(g.as_form())
    rng = np.random.default_rng(3)
    for d in (2, 3, 4):
        for k in range(d + 1):
            for m in range(d + 1):
                for _ in range(50):
                    psi = DoubleForm.random(Bidegree(k, m, d), rng)
                    assert involution(involution(psi)).allclose(psi, atol=0)


def test_interior_examples():
    e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    psi = form(Bidegree(2, 0, 2), (0, 1), ())
    assert interior_product(psi, e1).allclose(form(Bidegree(1, 0, 2), (1,), ()))
    phi = form(Bidegree(1, 1, 2), (0,), (1,))
    assert interior_product(phi, e2, "vector").allclose(form(Bidegree(1, 0, 2), (0,), ()))
    with pytest.raises(ValueError):
        interior_product(form(Bidegree(0, 1, 2), (), (0,)), e1, "form")


@settings(max_examples=30, deadline=None)
@given(d=st.integers(2, 3), k=st.integers(1, 2), m=st.integers(0, 2), l=st.integers(0, 1),
       n=st.integers(0, 1), seed=st.integers(0, 10**6))
def test_interior_antiderivation(d, k, m, l, n, seed):
    if k + l > d or m + n > d:
        return
    rng = np.random.default_rng(seed)
    psi = DoubleForm.random(Bidegree(k, m, d), rng)
    eta = DoubleForm.random(Bidegree(l, n, d), rng)
    X = rng.standard_normal(d)
    lhs = interior_product(wedge(psi, eta), X)
    rhs = wedge(interior_product(psi, X), eta)
    if l:
        rhs = rhs + (-1) ** k * wedge(psi, interior_product(eta, X))
    assert lhs.allclose(rhs)
    # and against the tensor contraction oracle
    T = oracles.to_tensor(wedge(psi, eta).coeffs, d, k + l, m + n)
    C = oracles.interior_tensor(T, X, k + l, m + n)
    assert np.allclose(lhs.coeffs, oracles.from_tensor(C, d, k + l - 1, m + n), atol=1e-12)


def test_bianchi_sum_example():
    bd = Bidegree(1, 1, 2)
    out = bianchi_sum(form(bd, (0,), (1,)))
    assert out.allclose(form(Bidegree(2, 0, 2), (0, 1), (), -1.0))


def test_bianchi_sum_kills_metric():
    rng = np.random.default_rng(0)
    for d in (2, 3, 4):
        g = random_metric(d, rng)
        assert np.abs(bianchi_sum(g.as_form()).coeffs).max() < 1e-14


def test_bianchi_commutator_on_21():
    rng = np.random.default_rng(11)
    bd = Bidegree(2, 1, 3)
    for _ in range(20):
        psi = DoubleForm.random(bd, rng)
        lhs = bianchi_sum(bianchi_sum(psi, "GV"), "G") - bianchi_sum(bianchi_sum(psi, "G"), "GV")
        assert lhs.allclose(psi)


@settings(max_examples=25, deadline=None)
@given(d=st.integers(2, 3), k=st.integers(0, 3), m=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_bianchi_sum_is_frame_invariant(d, k, m, seed):
    if k >= d or m > d:
        return
    rng = np.random.default_rng(seed)
    g = random_metric(d, rng, spread=1.0)
    psi = DoubleForm.random(Bidegree(k, m, d), rng)
    assert np.allclose(bianchi_sum(psi).coeffs, oracles.bianchi_oracle(psi.coeffs, d, k, m, g.g),
                       atol=1e-11)


def test_bianchi_underflow_rejected():
    with pytest.raises(ValueError):
        bianchi_sum(DoubleForm.random(Bidegree(1, 0, 2), np.random.default_rng(0)), "G")
    with pytest.raises(ValueError):
        bianchi_sum(DoubleForm.random(Bidegree(0, 1, 2), np.random.default_rng(0)), "GV")


def test_metric_frame_orthonormal():
    rng = np.random.default_rng(5)
    for d in (2, 3, 4):
        g = random_metric(d, rng, spread=2.0)
        theta, E = g.coframe, g.frame
        assert np.abs(theta @ g.ginv @ theta.T - np.eye(d)).max() < 1e-12
        assert np.abs(E.T @ g.g @ E - np.eye(d)).max() < 1e-12
    with pytest.raises(ValueError):
        Metric(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        Metric(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_trace_of_metric_is_dimension():
    rng = np.random.default_rng(2)
    for d in (2, 3, 4):
        g = random_metric(d, rng)
        assert abs(metric_op(g.as_form(), "trace", g).coeffs[0] - d) < 1e-12


def test_hodge_star_identities():
    rng = np.random.default_rng(4)
    for d in (2, 3, 4):
        g = random_metric(d, rng)
        one = DoubleForm(Bidegree(0, 0, d), np.array([1.0]))
        assert metric_op(one, "star", g).allclose(g.volume())
        for k in range(d + 1):
            psi = DoubleForm.random(Bidegree(k, 0, d), rng)
            twice = metric_op(metric_op(psi, "star", g), "star", g)
            assert twice.allclose((-1) ** (k * (d - k)) * psi)
            # star is a fiber isometry
            assert abs(g.inner(psi, psi) - g.inner(metric_op(psi, "star", g), metric_op(psi, "star", g))) < 1e-11


def test_star_vector_is_conjugated_star():
    rng = np.random.default_rng(8)
    g = random_metric(3, rng)
    psi = DoubleForm.random(Bidegree(1, 2, 3), rng)
    lhs = metric_op(psi, "starV", g)
    rhs = involution(metric_op(involution(psi), "star", g))
    assert lhs.allclose(rhs)


def test_gwedge_adjoint_of_trace():
    rng = np.random.default_rng(9)
    d = 3
    g = random_metric(d, rng)
    for _ in range(100):
        k, m = rng.integers(0, d, size=2)
        psi = DoubleForm.random(Bidegree(k, m, d), rng)
        eta = DoubleForm.random(Bidegree(k + 1, m + 1, d), rng)
        lhs = g.inner(metric_op(psi, "gwedge", g), eta)
        rhs = g.inner(psi, metric_op(eta, "trace", g))
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_projection_example():
    bd = Bidegree(1, 1, 2)
    out = project_bianchi(form(bd, (0,), (1,)))
    expected = 0.5 * (form(bd, (0,), (1,)) + form(bd, (1,), (0,)))
    assert out.allclose(expected, atol=1e-15)


def test_projection_properties():
    rng = np.random.default_rng(12)
    for d in (2, 3, 4):
        g = random_metric(d, rng)
        for k in range(d + 1):
            for m in range(d + 1):
                bd = Bidegree(k, m, d)
                P = g.bianchi_projector(bd)
                G = g.gram(bd)
                assert np.abs(P @ P - P).max() < 1e-12
                assert np.abs(G @ P - P.T @ G).max() < 1e-12
                # commutes with the involution
                Pt = g.bianchi_projector(bd.T)
                from doubleforms.fiber_algebra import involution_matrix
                assert np.abs(involution_matrix(bd) @ P - Pt @ involution_matrix(bd)).max() < 1e-12
                psi = DoubleForm.random(bd, rng)
                p = project_bianchi(psi, g)
                assert abs(g.inner(p, psi - p)) < 1e-12
                if k >= m and m >= 1 and k < d:
                    assert np.abs(bianchi_matrix(bd, "G") @ p.coeffs).max() < 1e-12


def test_projector_matches_independent_oracle():
    rng = np.random.default_rng(13)
    for d in (2, 3, 4):
        g = random_metric(d, rng)
        for k in range(d + 1):
            for m in range(d + 1):
                bd = Bidegree(k, m, d)
                if k <= m:
                    K = bianchi_matrix(bd, "GV") if k else np.zeros((0, bd.dim))
                else:
                    K = bianchi_matrix(bd, "G") if m else np.zeros((0, bd.dim))
                P_ref = oracles.orthogonal_projector(K, g.gram(bd))
                assert np.abs(g.bianchi_projector(bd) - P_ref).max() < 1e-10


def test_explicit_interior_formula_d3():
    rng = np.random.default_rng(14)
    bd = Bidegree(2, 1, 3)
    g = random_metric(3, rng)
    Q = bianchi_basis(bd)
    tgt = bd.shift(-1, 0)
    K = bianchi_matrix(tgt, "GV") if tgt.k < tgt.m else bianchi_matrix(tgt, "G")
    P_ref = oracles.orthogonal_projector(K, g.gram(tgt))
    from doubleforms.fiber_algebra import interior_matrix
    for _ in range(100):
        psi = Q @ rng.standard_normal(Q.shape[1])
        xi = rng.standard_normal(3)
        lhs = bianchi_interior_matrix(bd, xi, g) @ psi
        rhs = P_ref @ interior_matrix(bd, g.sharp(xi)) @ psi
        assert np.abs(lhs - rhs).max() < 1e-10


def test_explicit_wedge_formula():
    rng = np.random.default_rng(15)
    for d in (2, 3, 4):
        g = random_metric(d, rng)
        for k in range(d):
            for m in range(k + 1, d + 1):
                bd = Bidegree(k, m, d)
                tgt = bd.shift(1, 0)
                K = bianchi_matrix(tgt, "GV") if tgt.k <= tgt.m else bianchi_matrix(tgt, "G")
                P_ref = oracles.orthogonal_projector(K, g.gram(tgt))
                Q = bianchi_basis(bd)
                for _ in range(10):
                    psi = Q @ rng.standard_normal(Q.shape[1])
                    xi = rng.standard_normal(d)
                    lhs = bianchi_wedge_matrix(bd, xi) @ psi
                    rhs = P_ref @ wedge_matrix(bd, xi) @ psi
                    assert np.abs(lhs - rhs).max() < 1e-10


def test_bianchi_sums_injective():
    for d in (2, 3, 4):
        for k in range(d + 1):
            for m in range(d + 1):
                bd = Bidegree(k, m, d)
                if k < m:
                    assert np.linalg.matrix_rank(bianchi_matrix(bd, "G")) == bd.dim
                if k > m:
                    assert np.linalg.matrix_rank(bianchi_matrix(bd, "GV")) == bd.dim


def test_orthogonal_decomposition_kerG_imGV():
    rng = np.random.default_rng(16)
    for d in (2, 3):
        g = random_metric(d, rng)
        for k in range(d + 1):
            for m in range(1, d + 1):
                bd = Bidegree(k, m, d)
                if k == d:
                    continue
                kerG = bianchi_basis(bd) if k >= m else None
                if kerG is None:
                    continue
                GV = bianchi_matrix(bd.shift(1, -1), "GV")
                im = GV @ rng.standard_normal((GV.shape[1], 5))
                assert np.abs(kerG.T @ g.gram(bd) @ im).max() < 1e-12
                assert np.linalg.matrix_rank(np.hstack([kerG, im]) if im.size else kerG) <= bd.dim


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("complex_", [False, True])
def test_relation_suite(d, complex_):
    records = relation_suite(d, samples=100, seed=d, complex_=complex_)
    assert records and all(r["pass"] for r in records)


@pytest.mark.parametrize("d", [2, 3])
def test_product_rule(d):
    assert all(r["pass"] for r in product_rule_suite(d, samples=5, seed=1))
