import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from doubleforms.discrete_geometry import Discretization, DomainSpec, build_domain
from doubleforms.precomplex_engine import (
    IntegrabilityError,
    Weighted,
    build_chain,
    cohomology_dims,
    correct_chain,
    hodge_decompose,
    kernel_certificate,
    manufactured_data,
    range_projector,
    rank_decision,
    solve_bvp,
)

FLAT = DomainSpec(n=8)
CURVED = DomainSpec(n=8, metric="conformal", phi="0.2*x1*x2")
ANNULUS = DomainSpec(chart="annulus", metric="polar", n=8)
SO3 = DomainSpec(n=8, connection=(
    (("0", "0", "0"), ("0", "0", "-8"), ("0", "8", "0")),
    (("0", "0", "8"), ("0", "0", "0"), ("-8", "0", "0")),
))

_cache = {}


def chain(kind, dom):
    key = (kind, dom)
    if key not in _cache:
        _cache[key] = correct_chain(build_chain(kind, dom))
    return _cache[key]


def mnorm(x, M):
    return float(np.sqrt(x @ M @ x))


def spd(rng, n):
    X = rng.normal(size=(n, n))
    return X @ X.T + n * np.eye(n)


# linear algebra -----------------------------------------------------------------

def test_range_projector_of_zero():
    rp = range_projector(np.zeros((3, 4)), np.eye(4), np.eye(3))
    assert rp.rank == 0
    assert not np.any(rp.P) and not np.any(rp.Pi)


def test_range_projector_of_isometry_is_transpose():
    Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(6, 3)))
    rp = range_projector(Q, np.eye(3), np.eye(6))
    assert np.abs(rp.P - Q.T).max() < 1e-12
    assert np.abs(rp.Pi - Q @ Q.T).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 4), st.integers(0, 10_000))
def test_range_projector_against_symmetric_root_oracle(m, n, r, seed):
    rng = np.random.default_rng(seed)
    r = min(r, m, n)
    A = rng.normal(size=(m, r)) @ rng.normal(size=(r, n))
    Ms, Mt = spd(rng, n), spd(rng, m)
    rp = range_projector(A, Ms, Mt)
    Rs, Rt = np.real(sla.sqrtm(Ms)), np.real(sla.sqrtm(Mt))
    P_ref = np.linalg.solve(Rs, np.linalg.pinv(Rt @ A @ np.linalg.inv(Rs), rcond=1e-8)) @ Rt
    assert rp.rank == r
    assert np.abs(rp.P - P_ref).max() < 1e-8 * (1 + np.abs(P_ref).max())
    Pi = rp.Pi
    assert np.abs(Pi @ Pi - Pi).max() < 1e-9
    assert np.abs(Mt @ Pi - (Mt @ Pi).T).max() < 1e-8 * np.abs(Mt).max()


def test_rank_decision_flags_ambiguous_gap():
    assert rank_decision(np.array([1.0, 0.5, 1e-12])) == (2, False)
    r, amb = rank_decision(np.array([1.0, 2e-8, 5e-9]))
    assert r == 2 and amb


def test_kernel_certificate_pads_missing_singular_values():
    cert = kernel_certificate(np.array([3.0, 1.0]), 4)
    assert cert.dim == 2 and cert.certified
    cert = kernel_certificate(np.array([1.0, 2e-3, 5e-4, 1e-6, 3e-9, 1e-11, 3e-14]), 7)
    assert not cert.certified and cert.to_dict()["dim"] is None


def test_weighted_coordinates_round_trip():
    rng = np.random.default_rng(1)
    M = spd(rng, 5)
    w = Weighted.of(M)
    x = rng.normal(size=5)
    assert np.allclose(w.M, M)
    assert w.to(x) @ w.to(x) == pytest.approx(x @ M @ x)
    assert np.allclose(w.back(w.to(x)), np.linalg.solve(M, M @ x))


def test_gradient_projector_dense_oracle():
    ch = chain("de_rham", CURVED)
    A = ch.A[0]
    M0, M1 = ch.weights[0].M, ch.weights[1].M
    Pi_ref = A @ np.linalg.pinv(A.T @ M1 @ A, rcond=1e-10) @ A.T @ M1
    Pi = ch.projectors[0].Pi
    assert np.abs(Pi - Pi_ref).max() < 1e-8
    assert np.abs(Pi @ Pi - Pi).max() < 1e-10
    assert np.abs(M1 @ Pi - (M1 @ Pi).T).max() < 1e-10
    # constants are the gradient kernel, so the rank is N - 1
    assert ch.projectors[0].rank == M0.shape[0] - 1


# corrected chains -----------------------------------------------------------------

def test_first_operator_is_unchanged():
    ch = chain("calabi", CURVED)
    assert ch.corrected[0] is ch.A[0]
    assert not np.any(ch.corrections[0])


def test_corrections_vanish_for_flat_de_rham():
    ch = chain("de_rham", FLAT)
    assert max(ch.correction_norms()) <= 1e-10


@pytest.mark.parametrize("kind,dom", [("de_rham", CURVED), ("calabi", CURVED), ("hessian", CURVED),
                                      ("twisted_de_rham", SO3)])
def test_corrected_chain_is_a_complex(kind, dom):
    ch = chain(kind, dom)
    for row in ch.nilpotency():
        assert row["corrected"] <= 1e-8
    assert max(ch.recursion_defect) <= 1e-10
    for k in range(ch.nlevels - 1):
        C = ch.corrected[k + 1] @ ch.corrected[k]
        bound = 10 * ch.tau * np.linalg.norm(ch.A[k + 1], 2) * np.linalg.norm(ch.corrected[k], 2)
        assert np.linalg.norm(C, 2) <= bound


@pytest.mark.parametrize("kind,dom", [("calabi", CURVED), ("twisted_de_rham", SO3)])
def test_every_range_projector_is_m_orthogonal(kind, dom):
    ch = chain(kind, dom)
    for k, rp in enumerate(ch.projectors):
        M = ch.weights[k + 1].M
        A = ch.corrected[k]
        assert not rp.ambiguous
        assert np.abs(rp.Pi @ rp.Pi - rp.Pi).max() <= 1e-10 * max(1, np.abs(rp.Pi).max())
        assert np.abs(M @ rp.Pi - (M @ rp.Pi).T).max() <= 1e-10 * np.abs(M).max()
        assert np.abs(rp.Pi @ A - A).max() <= 1e-8 * np.abs(A).max()


def test_twisted_chain_is_not_a_complex_before_correction():
    ch = chain("twisted_de_rham", SO3)
    assert ch.nilpotency()[0]["uncorrected"] > 1e-2


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_correction_acts_only_on_the_previous_range(seed):
    """Corrected operators kill the previous range and agree with the original off it."""
    ch = chain("calabi", CURVED)
    rng = np.random.default_rng(seed)
    for k in range(1, ch.nlevels):
        x = rng.normal(size=ch.A[k].shape[1])
        Pi = ch.projectors[k - 1].Pi
        scale = np.abs(ch.A[k]).max() * np.abs(x).max()
        assert np.abs(ch.corrected[k] @ (Pi @ x)).max() <= 1e-8 * scale
        perp = x - Pi @ x
        assert np.abs(ch.corrected[k] @ perp - ch.A[k] @ perp).max() <= 1e-8 * scale


def test_discrete_green_formula_holds_exactly():
    ch = chain("calabi", CURVED)
    rng = np.random.default_rng(2)
    for k in range(ch.nlevels):
        psi = rng.normal(size=ch.A[k].shape[1])
        eta = rng.normal(size=ch.A[k].shape[0])
        lhs = (ch.corrected[k] @ psi) @ ch.weights[k + 1].M @ eta
        vol = psi @ ch.weights[k].M @ (ch.adjoint(k) @ eta)
        Mb = ch.spec.boundary_masses[k].toarray()
        bnd = (ch.boundary(k) @ psi) @ Mb @ (ch.boundary_star(k) @ eta)
        assert abs(lhs - vol - bnd) <= 1e-9 * (abs(lhs) + abs(vol) + abs(bnd))


@pytest.mark.parametrize("kind,dom,dims", [
    ("de_rham", FLAT, [1, 0, 0]),
    ("de_rham", ANNULUS, [1, 1, 0]),
    ("hessian", FLAT, [3, 0, 0]),
    ("calabi", FLAT, [3, 0, 0]),
])
def test_cohomology_dimensions(kind, dom, dims):
    ch = chain(kind, dom)
    assert [row["dim"] for row in cohomology_dims(ch)] == dims
    for k in range(ch.nlevels + 1):
        h = ch.harmonic(k)
        assert h.agree
        assert h.adjoint_route.certified and h.projector_route.certified


def test_harmonic_basis_is_orthonormal_and_annihilated():
    ch = chain("calabi", FLAT)
    H = ch.harmonic(0).basis
    M = ch.weights[0].M
    assert np.abs(H.T @ M @ H - np.eye(H.shape[1])).max() < 1e-10
    assert np.abs(ch.corrected[0] @ H).max() < 1e-8


def test_flat_calabi_kernel_is_infinitesimal_motions():
    ch = chain("calabi", FLAT)
    X = build_domain(FLAT).coords
    H = ch.harmonic(0).basis
    M = ch.weights[0].M
    motions = np.stack([np.stack(c, 1).reshape(-1) for c in (
        (np.ones(len(X)), np.zeros(len(X))), (np.zeros(len(X)), np.ones(len(X))), (-X[:, 1], X[:, 0]))], 1)
    resid = motions - H @ (H.T @ (M @ motions))
    assert np.abs(resid).max() < 1e-10


# Hodge decomposition -----------------------------------------------------------------

@pytest.mark.parametrize("k", [0, 1, 2])
def test_hodge_parts_are_orthogonal_and_sum(k):
    ch = chain("calabi", CURVED)
    disc = Discretization(build_domain(CURVED))
    psi = disc.smooth_field(ch.spec.spaces[k], 20 + k)
    hp = hodge_decompose(ch, k, psi)
    assert hp.orthogonality < 1e-10
    assert hp.reconstruction < 1e-12


def test_hodge_of_exact_field_is_exact():
    ch = chain("de_rham", CURVED)
    disc = Discretization(build_domain(CURVED))
    f = disc.smooth_field(ch.spec.spaces[0], 3)
    hp = hodge_decompose(ch, 1, ch.corrected[0] @ f)
    M = ch.weights[1].M
    assert mnorm(hp.harmonic, M) + mnorm(hp.coexact, M) < 1e-10 * mnorm(hp.exact, M)


def test_hodge_of_harmonic_field_is_harmonic():
    ch = chain("de_rham", ANNULUS)
    H = ch.harmonic(1).basis[:, 0]
    hp = hodge_decompose(ch, 1, H)
    M = ch.weights[1].M
    assert mnorm(hp.harmonic - H, M) < 1e-10


# boundary-value problems ---------------------------------------------------------------

@pytest.mark.parametrize("k", [0, 1, 2])
def test_bvp_recovers_manufactured_field(k):
    ch = chain("calabi", CURVED)
    disc = Discretization(build_domain(CURVED))
    psi = disc.smooth_field(ch.spec.spaces[k], 10 + k)
    sol = solve_bvp(ch, k, *manufactured_data(ch, k, psi))
    H = ch.harmonic(k).basis
    M = ch.weights[k].M
    diff = sol.psi - psi
    diff -= H @ (H.T @ (M @ diff))
    assert mnorm(diff, M) <= 1e-8 * mnorm(psi, M)
    assert sol.solved and sol.harmonic_norm < 1e-8


def test_bvp_refuses_unreachable_source():
    ch = chain("calabi", CURVED)
    disc = Discretization(build_domain(CURVED))
    with pytest.raises(IntegrabilityError) as err:
        solve_bvp(ch, 0, chi=disc.smooth_field(ch.spec.spaces[1], 3))
    assert err.value.solution.violated == ["condition_1"]


def test_bvp_refuses_harmonic_source():
    ch = chain("de_rham", ANNULUS)
    with pytest.raises(IntegrabilityError) as err:
        solve_bvp(ch, 0, chi=ch.harmonic(1).basis[:, 0])
    assert err.value.solution.violated == ["condition_1"]


def test_stress_potential_solve_is_accepted_and_improves_with_h():
    """Divergence-free stresses with vanishing normal traces pass every condition.

    The collocated boundary rows leave an O(h) mismatch with the range of the
    potential map, so the achieved residual is reported and must shrink.
    """
    from scipy.linalg import null_space
    residuals = []
    for n in (8, 12, 16):
        ch = correct_chain(build_chain("calabi", DomainSpec(n=n)))
        disc = Discretization(build_domain(ch.spec.domain))
        w = ch.weights[1]
        rows = np.vstack([ch.weights[0].to(ch.adjoint(0)), ch.Mb_half(0)[:, None] * ch.boundary_star(0)])
        Z = null_space(rows @ np.linalg.inv(w.L.T), rcond=1e-10)
        sigma = w.back(Z @ (Z.T @ w.to(disc.smooth_field(ch.spec.spaces[1], 3))))
        sol = solve_bvp(ch, 2, None, sigma, np.zeros(ch.A[1].shape[0]))
        assert not sol.violated
        residuals.append(sol.residuals["relative_equation_residual"])
    assert residuals[0] > residuals[1] > residuals[2]


def test_bvp_refuses_harmonic_component_in_adjoint_data():
    ch = chain("calabi", FLAT)
    disc = Discretization(build_domain(FLAT))
    chi, xi, phi = manufactured_data(ch, 1, disc.smooth_field(ch.spec.spaces[1], 5))
    with pytest.raises(IntegrabilityError) as err:
        solve_bvp(ch, 1, chi, xi + ch.harmonic(0).basis[:, 0], phi)
    assert "condition_3" in err.value.solution.violated
    assert "condition_1" not in err.value.solution.violated


def test_bvp_refuses_non_closed_adjoint_data():
    ch = chain("calabi", CURVED)
    disc = Discretization(build_domain(CURVED))
    chi, xi, phi = manufactured_data(ch, 2, disc.smooth_field(ch.spec.spaces[2], 6))
    omega = disc.smooth_field(ch.spec.spaces[0], 7)
    with pytest.raises(IntegrabilityError) as err:
        solve_bvp(ch, 2, chi, xi + ch.corrected[0] @ omega, phi)
    assert "condition_2" in err.value.solution.violated


def test_bvp_solution_unique_modulo_harmonic():
    ch = chain("calabi", FLAT)
    disc = Discretization(build_domain(FLAT))
    psi = disc.smooth_field(ch.spec.spaces[0], 8)
    chi, _, _ = manufactured_data(ch, 0, psi)
    rng = np.random.default_rng(0)
    s1 = solve_bvp(ch, 0, chi, x0=rng.normal(size=len(psi)))
    s2 = solve_bvp(ch, 0, chi, x0=rng.normal(size=len(psi)))
    H, M = ch.harmonic(0).basis, ch.weights[0].M
    dd = s1.psi - s2.psi
    r = dd - H @ (H.T @ (M @ dd))
    assert mnorm(r, M) <= 1e-8 * mnorm(dd, M)
    assert mnorm(dd, M) > 1e-3


def test_chain_rejects_nonconformable_request():
    with pytest.raises(ValueError):
        build_chain("calabi", DomainSpec(n=8, d=3))
    with pytest.raises(ValueError):
        build_chain("twisted_de_rham", FLAT)
    with pytest.raises(ValueError):
        build_chain("koszul", FLAT)
