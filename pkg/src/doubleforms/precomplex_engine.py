"""Induced complex of a discrete pre-complex.

Given levels A_k : X_k -> X_{k+1} with mass matrices M_k and boundary
operators (B_k on X_k, B*_k on X_{k+1}), the engine builds

    corrected_0 = A_0,  corrected_{k+1} = A_{k+1} (I - Pi_k),  Pi_k = corrected_k P_k

with P_k the M-weighted pseudoinverse, so that consecutive corrected
operators compose to zero.  The adjoint used everywhere is the one that
makes the discrete Green formula exact:

    adj(A_k) = M_k^{-1} (A_k^T M_{k+1} - B_k^T M_bdry B*_k)

All factorizations are dense and carried out in mass-weighted coordinates
y = L^T x with M = L L^T.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .discrete_geometry import (
    Discretization,
    DiscreteOperator,
    DomainSpec,
    FieldSpace,
    GREEN_PAIRS,
    build_domain,
)
from .fiber_algebra import Bidegree

RANK_TAU = 1e-8
RANK_GAP = 10.0
KERNEL_GAP = 1e3
ZERO_CLUSTER = 1e-3
BVP_TOL = 1e-6
PREIMAGE_TOL = 1e-6


# linear algebra ---------------------------------------------------------------

def _dense(A) -> np.ndarray:
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=float)


@dataclass
class Weighted:
    """Cholesky factor of a mass matrix, M = L L^T."""
    L: np.ndarray

    @classmethod
    def of(cls, M) -> "Weighted":
        M = _dense(M)
        if M.shape[0] == 0:
            return cls(np.zeros((0, 0)))
        return cls(sla.cholesky(0.5 * (M + M.T), lower=True))

    @property
    def M(self) -> np.ndarray:
        return self.L @ self.L.T

    def to(self, x):
        """x -> L^T x."""
        return self.L.T @ x

    def back(self, y):
        """y -> L^{-T} y."""
        if self.L.shape[0] == 0:
            return y
        return sla.solve_triangular(self.L, y, lower=True, trans="T")

    def weigh_op(self, A: np.ndarray, src: "Weighted") -> np.ndarray:
        """Matrix of A in weighted coordinates: L_t^T A L_s^{-T}."""
        AL = A if src.L.shape[0] == 0 else sla.solve_triangular(src.L, A.T, lower=True).T
        return self.L.T @ AL


def rank_decision(s: np.ndarray, tau: float = RANK_TAU) -> tuple:
    """Numerical rank at relative tolerance tau and whether it is ambiguous."""
    if len(s) == 0 or s[0] == 0:
        return 0, False
    r = int(np.sum(s > tau * s[0]))
    ambiguous = 0 < r < len(s) and s[r - 1] < RANK_GAP * s[r]
    return r, bool(ambiguous)


@dataclass
class KernelCertificate:
    """Kernel dimension read off a singular-value gap."""
    dim: int
    gap: float
    interval: tuple
    tail: list

    @property
    def certified(self) -> bool:
        return self.gap >= KERNEL_GAP

    def to_dict(self) -> dict:
        return {"dim": self.dim if self.certified else None, "interval": list(self.interval),
                "gap": _finite(self.gap), "certified": self.certified,
                "smallest_singular_values": [float(f"{x:.6e}") for x in self.tail]}


def _finite(x: float):
    return None if not np.isfinite(x) else float(f"{x:.6e}")


def kernel_certificate(s_desc: np.ndarray, ncols: int) -> KernelCertificate:
    """Kernel dimension of a matrix with ``ncols`` columns from its singular values.

    Singular values are padded with zeros up to ``ncols``.  The dimension is
    placed at the largest ratio between consecutive singular values inside the
    zero cluster (below ZERO_CLUSTER * s_max).
    """
    s = np.zeros(ncols)
    s[:min(len(s_desc), ncols)] = s_desc[:ncols]
    asc = s[::-1]
    smax = s[0] if ncols else 0.0
    if smax == 0:
        return KernelCertificate(ncols, np.inf, (ncols, ncols), [])
    floor = np.finfo(float).eps * smax
    small = int(np.sum(asc < ZERO_CLUSTER * smax))
    best_dim, best_gap = 0, asc[0] / floor if asc[0] > floor else 1.0
    for j in range(1, small + 1):
        gap = asc[j] / max(asc[j - 1], floor) if j < ncols else np.inf
        if gap > best_gap:
            best_dim, best_gap = j, gap
    lo = int(np.sum(asc < 1e-10 * smax))
    interval = (best_dim, best_dim) if best_gap >= KERNEL_GAP else (lo, small)
    tail = (asc[:min(ncols, best_dim + 3)] / smax).tolist()
    return KernelCertificate(best_dim, float(best_gap), interval, tail)


def null_space(A: np.ndarray) -> tuple:
    """(orthonormal kernel basis, certificate) of a dense matrix."""
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n), KernelCertificate(n, np.inf, (n, n), [])
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    cert = kernel_certificate(s, n)
    return vt[n - cert.dim:].T, cert


# range projectors ---------------------------------------------------------------

@dataclass
class RangeProjector:
    P: np.ndarray
    Pi: np.ndarray
    rank: int
    ambiguous: bool
    singular_values: np.ndarray


def range_projector(A, M_src, M_tgt, tau: float = RANK_TAU) -> RangeProjector:
    """M-weighted Moore-Penrose pseudoinverse P of A and Pi = A P."""
    A = _dense(A)
    ws = M_src if isinstance(M_src, Weighted) else Weighted.of(M_src)
    wt = M_tgt if isinstance(M_tgt, Weighted) else Weighted.of(M_tgt)
    At = wt.weigh_op(A, ws)
    if At.size == 0:
        return RangeProjector(np.zeros(A.T.shape), np.zeros((A.shape[0],) * 2), 0, False, np.zeros(0))
    U, s, Vt = np.linalg.svd(At, full_matrices=False)
    r, amb = rank_decision(s, tau)
    pinv = (Vt[:r].T / s[:r]) @ U[:, :r].T
    P = ws.back(pinv @ wt.L.T)
    # A P formed from the left singular vectors, which keeps it idempotent to rounding
    Pi = wt.back(U[:, :r] @ (U[:, :r].T @ wt.L.T))
    return RangeProjector(P, Pi, r, amb, s)


# chains -----------------------------------------------------------------------

@dataclass
class ChainLevel:
    op: DiscreteOperator            # A_k : X_k -> X_{k+1}
    boundary: DiscreteOperator      # B_k on X_k
    boundary_star: DiscreteOperator  # B*_k on X_{k+1}


@dataclass
class ChainSpec:
    name: str
    kind: str
    domain: DomainSpec
    spaces: list
    levels: list
    masses: list
    boundary_masses: list

    def __post_init__(self):
        if len(self.spaces) != len(self.levels) + 1:
            raise ValueError("a chain with L levels needs L + 1 spaces")
        for k, lev in enumerate(self.levels):
            if lev.op.source != self.spaces[k] or lev.op.target != self.spaces[k + 1]:
                raise ValueError(f"level {k} is not conformable with the chain spaces")

    @property
    def orders(self) -> list:
        return [lev.op.order for lev in self.levels]


def bianchi_chain_spaces(d: int, m: int) -> tuple:
    """Bidegrees and operator names of the Bianchi chain with junction at (m, m)."""
    bds, ops = [], []
    for j in range(d + 1):
        bds.append(Bidegree(j, m, d) if j <= m else Bidegree(j, m + 1, d))
        if j < d:
            ops.append("H" if j == m else "dG")
    return bds, ops


CHAIN_KINDS = ("de_rham", "twisted_de_rham", "bianchi", "calabi", "hessian")


def build_chain(kind: str, domain: DomainSpec, m: int = 1) -> ChainSpec:
    """Assemble a chain on a domain.

    ``de_rham`` and ``twisted_de_rham`` use scalar resp. rank-2 bundle valued
    forms (the twisted one needs ``domain.connection``).  ``bianchi`` is the
    chain with junction H at bidegree (m, m); ``calabi`` is m = 1 and
    ``hessian`` is m = 0.
    """
    if kind not in CHAIN_KINDS:
        raise ValueError(f"unknown chain kind {kind!r}")
    if kind == "calabi":
        kind, m = "bianchi", 1
    elif kind == "hessian":
        kind, m = "bianchi", 0
    disc = Discretization(build_domain(domain))
    d = domain.d
    if kind in ("de_rham", "twisted_de_rham"):
        rank = domain.bundle_rank if kind == "twisted_de_rham" else 1
        if kind == "twisted_de_rham" and domain.connection is None:
            raise ValueError("the twisted chain needs a connection")
        spaces = [FieldSpace(Bidegree(k, 0, d), "full", rank) for k in range(d + 1)]
        ops = ["d"] * d
        name = kind
    else:
        if d != 2:
            raise ValueError("Bianchi chains need the d = 2 boundary operators")
        if not 0 <= m <= d:
            raise ValueError("m must lie in 0..d")
        bds, ops = bianchi_chain_spaces(d, m)
        spaces = [FieldSpace(b, "bianchi") for b in bds]
        name = {0: "hessian", 1: "calabi"}.get(m, f"bianchi_m{m}")
    levels = []
    for k, op in enumerate(ops):
        _, b, bs = GREEN_PAIRS[op]
        A = disc.assemble(op, spaces[k])
        if A.target != spaces[k + 1]:
            raise ValueError(f"{op} on {spaces[k]} lands in {A.target}, not {spaces[k + 1]}")
        levels.append(ChainLevel(A, disc.assemble(b, spaces[k]), disc.assemble(bs, spaces[k + 1])))
    masses = [disc.mass_matrix(s) for s in spaces]
    bmasses = [disc.boundary_mass(lev.boundary.target) for lev in levels]
    return ChainSpec(name, kind, domain, spaces, levels, masses, bmasses)


# corrected chains ---------------------------------------------------------------

@dataclass
class CorrectedChain:
    spec: ChainSpec
    weights: list                  # Weighted per space
    A: list                        # dense original operators
    corrected: list                # dense corrected operators
    corrections: list              # G_k = corrected_k - A_k
    projectors: list               # RangeProjector per level
    recursion_defect: list         # directly built G vs recursive formula
    tau: float
    _harmonic: dict = field(default_factory=dict)

    @property
    def nlevels(self) -> int:
        return len(self.A)

    def norm(self, X: np.ndarray, src: int, tgt: int) -> float:
        """Spectral norm of X : X_src -> X_tgt in mass-weighted coordinates."""
        if X.size == 0:
            return 0.0
        return float(np.linalg.norm(self.weights[tgt].weigh_op(X, self.weights[src]), 2))

    def correction_norms(self) -> list:
        return [self.norm(G, k, k + 1) for k, G in enumerate(self.corrections)]

    def nilpotency(self) -> list:
        """Relative size of consecutive compositions, corrected and original."""
        out = []
        for k in range(self.nlevels - 1):
            C = self.corrected[k + 1] @ self.corrected[k]
            A = self.A[k + 1] @ self.A[k]
            denom = self.norm(self.corrected[k + 1], k + 1, k + 2) * self.norm(self.corrected[k], k, k + 1)
            denomA = self.norm(self.A[k + 1], k + 1, k + 2) * self.norm(self.A[k], k, k + 1)
            out.append({"level": k,
                        "corrected": self.norm(C, k, k + 2) / (denom + 1e-300),
                        "uncorrected": self.norm(A, k, k + 2) / (denomA + 1e-300)})
        return out

    def adjoint(self, k: int) -> np.ndarray:
        """adj of corrected_k, X_{k+1} -> X_k, with the boundary pairing removed."""
        lev = self.spec.levels[k]
        B = _dense(lev.boundary.matrix)
        Bs = _dense(lev.boundary_star.matrix)
        Mb = _dense(self.spec.boundary_masses[k])
        rhs = self.corrected[k].T @ self.weights[k + 1].M - B.T @ Mb @ Bs
        return sla.cho_solve((self.weights[k].L, True), rhs)

    def boundary_star(self, k: int) -> np.ndarray:
        return _dense(self.spec.levels[k].boundary_star.matrix)

    def boundary(self, k: int) -> np.ndarray:
        return _dense(self.spec.levels[k].boundary.matrix)

    def Mb_half(self, k: int) -> np.ndarray:
        w = np.sqrt(self.spec.boundary_masses[k].diagonal())
        return w

    # harmonic spaces
    def harmonic(self, k: int) -> "HarmonicSpace":
        if k not in self._harmonic:
            self._harmonic[k] = harmonic_space(self, k)
        return self._harmonic[k]


def correct_chain(spec: ChainSpec, tau: float = RANK_TAU) -> CorrectedChain:
    weights = [Weighted.of(M) for M in spec.masses]
    A = [_dense(lev.op.matrix) for lev in spec.levels]
    corrected = [A[0]]
    corrections = [np.zeros_like(A[0])]
    projectors, defects = [], [0.0]
    for k in range(len(A)):
        proj = range_projector(corrected[k], weights[k], weights[k + 1], tau)
        projectors.append(proj)
        if k + 1 == len(A):
            break
        nxt = A[k + 1] - A[k + 1] @ proj.Pi
        G = nxt - A[k + 1]
        recursive = -A[k + 1] @ A[k] @ proj.P - A[k + 1] @ corrections[k] @ proj.P
        scale = np.linalg.norm(A[k + 1]) * np.linalg.norm(A[k]) * np.linalg.norm(proj.P) + 1e-300
        defects.append(float(np.linalg.norm(G - recursive) / scale))
        corrected.append(nxt)
        corrections.append(G)
    return CorrectedChain(spec, weights, A, corrected, corrections, projectors, defects, tau)


# harmonic spaces ------------------------------------------------------------------

@dataclass
class HarmonicSpace:
    level: int
    basis: np.ndarray               # M-orthonormal columns
    adjoint_route: KernelCertificate
    projector_route: KernelCertificate

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def agree(self) -> bool:
        return (self.adjoint_route.certified and self.projector_route.certified
                and self.adjoint_route.dim == self.projector_route.dim)

    def to_dict(self) -> dict:
        return {"level": self.level, "dim": self.dim if self.agree else None,
                "adjoint_route": self.adjoint_route.to_dict(),
                "projector_route": self.projector_route.to_dict(), "routes_agree": self.agree}


def _weighted_rows(chain: CorrectedChain, k: int) -> tuple:
    """Weighted blocks of the corrected operator at level k and the boundary rows below it."""
    w = chain.weights[k]
    blocks = []
    if k < chain.nlevels:
        blocks.append(chain.weights[k + 1].weigh_op(chain.corrected[k], w))
    bstar = None
    if k > 0:
        Bs = chain.boundary_star(k - 1)
        bstar = chain.Mb_half(k - 1)[:, None] * Bs
        bstar = bstar if w.L.shape[0] == 0 else sla.solve_triangular(w.L, bstar.T, lower=True).T
    return blocks, bstar


def harmonic_space(chain: CorrectedChain, k: int) -> HarmonicSpace:
    """Joint kernel of corrected_k, adj(corrected_{k-1}) and B*_{k-1}.

    Route one stacks the three operators.  Route two replaces the adjoint by
    the range projector of the level below.  Both are read off singular-value
    gaps in mass-weighted coordinates.
    """
    w = chain.weights[k]
    n = chain.spec.masses[k].shape[0]
    blocks, bstar = _weighted_rows(chain, k)
    route1, route2 = list(blocks), list(blocks)
    if k > 0:
        adj = chain.weights[k - 1].weigh_op(chain.adjoint(k - 1), w)
        route1 += [adj, bstar]
        Pi = w.weigh_op(chain.projectors[k - 1].Pi, w)
        scale = max([np.linalg.norm(b, 2) for b in blocks + [bstar]] + [1.0])
        route2 += [bstar, scale * Pi]
    S1 = np.vstack(route1) if route1 else np.zeros((0, n))
    S2 = np.vstack(route2) if route2 else np.zeros((0, n))
    V, cert1 = null_space(S1)
    _, cert2 = null_space(S2)
    return HarmonicSpace(k, w.back(V), cert1, cert2)


def cohomology_dims(chain: CorrectedChain, levels=None) -> list:
    levels = range(chain.nlevels + 1) if levels is None else levels
    return [chain.harmonic(k).to_dict() for k in levels]


# Hodge-like decomposition ------------------------------------------------------------

@dataclass
class HodgeParts:
    exact: np.ndarray
    harmonic: np.ndarray
    coexact: np.ndarray
    orthogonality: float
    reconstruction: float
    preimage_residual: float | None
    flagged: bool

    def to_dict(self) -> dict:
        return {"orthogonality_defect": self.orthogonality, "reconstruction_error": self.reconstruction,
                "preimage_residual": self.preimage_residual, "flagged": self.flagged}


def hodge_decompose(chain: CorrectedChain, k: int, psi: np.ndarray) -> HodgeParts:
    """psi = Pi_{k-1} psi + (harmonic projection) + remainder, checked M-orthogonal."""
    M = chain.weights[k].M
    exact = chain.projectors[k - 1].Pi @ psi if k > 0 else np.zeros_like(psi)
    Hb = chain.harmonic(k).basis
    harm = Hb @ (Hb.T @ (M @ psi))
    rem = psi - exact - harm
    nrm = np.sqrt(psi @ M @ psi) + 1e-300
    parts = [exact, harm, rem]
    ortho = max(abs(parts[i] @ M @ parts[j]) for i in range(3) for j in range(i + 1, 3)) / nrm**2
    recon = float(np.sqrt((psi - exact - harm - rem) @ M @ (psi - exact - harm - rem)) / nrm)
    pre = None
    if k < chain.nlevels:
        adj = chain.adjoint(k)
        NB = np.linalg.svd(chain.boundary_star(k), full_matrices=True)[2]
        rB = int(np.sum(np.linalg.svd(chain.boundary_star(k), compute_uv=False) > 1e-12)) \
            if chain.boundary_star(k).size else 0
        NB = NB[rB:].T
        coef, *_ = np.linalg.lstsq(adj @ NB, rem, rcond=None)
        res = adj @ NB @ coef - rem
        rn = np.sqrt(rem @ M @ rem)
        pre = float(np.sqrt(res @ M @ res) / rn) if rn > 1e-14 * nrm else 0.0
        flagged = pre > PREIMAGE_TOL
    else:
        rn = float(np.sqrt(rem @ M @ rem) / nrm)
        pre, flagged = rn, rn > PREIMAGE_TOL
    return HodgeParts(exact, harm, rem, float(ortho), recon, pre, bool(flagged))


# boundary-value problems ------------------------------------------------------------

@dataclass
class BvpSolution:
    psi: np.ndarray | None
    solved: bool
    violated: list
    conditions: dict
    residuals: dict
    harmonic_norm: float | None
    diagnostics: dict

    def to_dict(self) -> dict:
        return {"solved": self.solved, "violated": self.violated, "conditions": self.conditions,
                "residuals": self.residuals, "harmonic_norm": self.harmonic_norm,
                "diagnostics": self.diagnostics}


class IntegrabilityError(ValueError):
    def __init__(self, solution: BvpSolution):
        self.solution = solution
        super().__init__("integrability condition(s) violated: " + ", ".join(solution.violated))


def _mnorm(x, M) -> float:
    return float(np.sqrt(max(x @ M @ x, 0.0)))


def integrability(chain: CorrectedChain, k: int, chi, xi, phi) -> dict:
    """Residuals of the three integrability conditions of the level-k problem."""
    out = {}
    Mk = chain.weights[k].M
    # (1) chi closed, orthogonal to the next harmonic space, and in the range
    if k < chain.nlevels:
        M1 = chain.weights[k + 1].M
        cn = _mnorm(chi, M1) + 1e-300
        r = []
        if k + 1 < chain.nlevels:
            r.append(_mnorm(chain.corrected[k + 1] @ chi, chain.weights[k + 2].M)
                     / (chain.norm(chain.corrected[k + 1], k + 1, k + 2) * cn + 1e-300))
        Hn = chain.harmonic(k + 1).basis
        r.append(float(np.max(np.abs(Hn.T @ (M1 @ chi)), initial=0.0)) / cn)
        rng = chi - chain.projectors[k].Pi @ chi
        out["range_defect"] = _mnorm(rng, M1) / cn
        out["condition_1"] = max(r + [out["range_defect"]])
    else:
        out["condition_1"] = 0.0 if chi is None or not np.any(chi) else np.inf
    if k == 0:
        out["condition_2"] = 0.0
        out["condition_3"] = 0.0
        return out
    M0 = chain.weights[k - 1].M
    adj = chain.adjoint(k - 1)
    r = xi - adj @ phi
    rn = _mnorm(xi, M0) + _mnorm(adj @ phi, M0) + 1e-300
    # (2) xi - adj(phi) in the kernel of adj_{k-2} and B*_{k-2}
    if k >= 2:
        a2 = chain.adjoint(k - 2) @ r
        b2 = chain.Mb_half(k - 2) * (chain.boundary_star(k - 2) @ r)
        out["condition_2"] = (_mnorm(a2, chain.weights[k - 2].M) / (chain.norm(chain.adjoint(k - 2), k - 1, k - 2) + 1e-300)
                              + float(np.linalg.norm(b2))) / rn
    else:
        out["condition_2"] = 0.0
    # (3) <xi, nu> = -<B* phi, B nu> for harmonic nu at level k-1
    Hp = chain.harmonic(k - 1).basis
    Mb = _dense(chain.spec.boundary_masses[k - 1])
    lhs = Hp.T @ (M0 @ xi) + (chain.boundary(k - 1) @ Hp).T @ (Mb @ (chain.boundary_star(k - 1) @ phi))
    out["condition_3"] = float(np.max(np.abs(lhs), initial=0.0)) / rn
    return out


def solve_bvp(chain: CorrectedChain, k: int, chi=None, xi=None, phi=None, x0=None,
              tol: float = BVP_TOL) -> BvpSolution:
    """Solve corrected_k psi = chi, adj_{k-1} psi = xi, B*_{k-1} psi = B*_{k-1} phi.

    Data violating an integrability condition is refused with the conditions
    named.  Without ``x0`` the M-minimal solution is returned (harmonic part
    zero); with ``x0`` an LSMR iteration started at x0 is used instead.
    """
    n = chain.spec.masses[k].shape[0]
    w = chain.weights[k]
    chi = np.zeros(chain.spec.masses[k + 1].shape[0]) if chi is None and k < chain.nlevels else chi
    if k > 0:
        xi = np.zeros(chain.spec.masses[k - 1].shape[0]) if xi is None else xi
        phi = np.zeros(n) if phi is None else phi
    conds = integrability(chain, k, chi, xi, phi)
    violated = [c for c in ("condition_1", "condition_2", "condition_3") if conds[c] > tol]
    if violated:
        sol = BvpSolution(None, False, violated, conds, {}, None, {"tolerance": tol})
        raise IntegrabilityError(sol)
    rows, rhs = [], []
    if k < chain.nlevels:
        rows.append(chain.weights[k + 1].to(chain.corrected[k]))
        rhs.append(chain.weights[k + 1].to(chi))
    if k > 0:
        rows.append(chain.weights[k - 1].to(chain.adjoint(k - 1)))
        rhs.append(chain.weights[k - 1].to(xi))
        mb = chain.Mb_half(k - 1)[:, None]
        Bs = chain.boundary_star(k - 1)
        rows.append(mb * Bs)
        rhs.append(mb[:, 0] * (Bs @ phi))
    S, b = np.vstack(rows), np.concatenate(rhs)
    diag = {"tolerance": tol}
    if x0 is None:
        Sw = sla.solve_triangular(w.L, S.T, lower=True).T  # S L^{-T}
        y, *_ = np.linalg.lstsq(Sw, b, rcond=None)
        psi = w.back(y)
        diag["method"] = "dense least squares, harmonic part pinned to zero"
    else:
        res = spla.lsmr(S, b, x0=np.asarray(x0, dtype=float), atol=1e-15, btol=1e-15,
                        maxiter=20 * n, conlim=1e16)
        psi = res[0]
        diag.update(method="lsmr", iterations=int(res[2]), stop=int(res[1]))
    achieved = S @ psi - b
    bn = float(np.linalg.norm(b)) + 1e-300
    Hb = chain.harmonic(k).basis
    harm = Hb.T @ (w.M @ psi)
    residuals = {"relative_equation_residual": float(np.linalg.norm(achieved) / bn)}
    # accepted data can still miss the discrete range; solved reports whether it was hit
    solved = residuals["relative_equation_residual"] <= tol
    return BvpSolution(psi, solved, [], conds, residuals, float(np.linalg.norm(harm)), diag)


def manufactured_data(chain: CorrectedChain, k: int, psi: np.ndarray) -> tuple:
    """(chi, xi, phi) generated by a known field psi."""
    chi = chain.corrected[k] @ psi if k < chain.nlevels else None
    xi = chain.adjoint(k - 1) @ psi if k > 0 else None
    phi = psi.copy() if k > 0 else None
    return chi, xi, phi
