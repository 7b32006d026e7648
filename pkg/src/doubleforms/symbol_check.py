"""Principal symbols and overdetermined-ellipticity checks.

Symbols are stored as homogeneous matrix polynomials in the cotangent
variable: a block of order r carries a coefficient tensor ``C`` of shape
``(d,)*r + (rows, cols)`` and evaluates to ``sum C[a1..ar] xi_a1 ... xi_ar``.
Unit-modulus factors (powers of i) are dropped throughout, so the symbol of
d is ``xi ^`` and the symbol of its adjoint is ``-i_{xi#}``; only kernels
and ranks are ever used.

The boundary test substitutes ``xi = xi' + i*lambda*dr`` with dr the unit
inward conormal and lambda standing for d/ds along the inward normal.  The
space of decaying solutions is carved out of the decaying solutions of a
square normal operator by exact linear algebra on exponential-polynomial
coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.linalg
from scipy.special import ndtri
from scipy.stats import qmc

from .fiber_algebra import (
    Bidegree,
    Metric,
    adapted_coframe,
    bianchi_basis,
    boundary_trace_matrix,
    involution_matrix,
    interior_matrix,
    ncomb,
    null_basis,
    random_metric,
    wedge_matrix,
)

SV_TOL = 1e-8
RESIDUAL_TOL = 1e-9
CLUSTER_RTOL = 1e-7
GROUP_RTOL = 1e-3

INTERIOR_OPS = ("d", "delta", "dV", "deltaV", "dG", "deltaG", "H", "Hstar")
TRACE_OPS = ("Ptt", "Pnt", "Ptn", "Pnn", "PttG", "PntG", "PtnG", "PnnG")
BOUNDARY_OPS = TRACE_OPS + ("T", "Tstar", "BG", "BGstar", "BH", "BHstar")
OP_ORDERS = {"d": 1, "delta": 1, "dV": 1, "deltaV": 1, "dG": 1, "deltaG": 1,
             "H": 2, "Hstar": 2, "T": 1, "Tstar": 1, **{p: 0 for p in TRACE_OPS}}


# symbol families -------------------------------------------------------------

@dataclass
class SymbolBlock:
    name: str
    order: int
    coeffs: np.ndarray          # (d,)*order + (rows, n_full)
    target: str
    gram: np.ndarray            # fiber metric on the target coefficients

    def __post_init__(self):
        if self.coeffs.ndim != self.order + 2:
            raise ValueError(f"block {self.name}: degree does not match order {self.order}")

    @property
    def rows(self) -> int:
        return self.coeffs.shape[-2]

    def evaluate(self, xi) -> np.ndarray:
        C = self.coeffs
        for _ in range(self.order):
            C = np.tensordot(np.asarray(xi), C, axes=(0, 0))
        return C

    def expand(self, u, w) -> list:
        """Coefficients of lambda^t in the evaluation at u + lambda*w."""
        out = [0.0] * (self.order + 1)
        for pattern in product((0, 1), repeat=self.order):
            C = self.coeffs
            for pick in pattern:
                C = np.tensordot(w if pick else u, C, axes=(0, 0))
            out[sum(pattern)] = out[sum(pattern)] + C
        return [np.asarray(c, dtype=complex) for c in out]


@dataclass
class SymbolFamily:
    """Direct sum of symbol blocks sharing one source space.

    ``basis`` spans the admissible source subspace inside the coordinate
    coefficients of ``source`` (identity, Bianchi forms or symmetric forms).
    """
    source: Bidegree
    metric: Metric
    basis: np.ndarray
    blocks: list = field(default_factory=list)
    domain: str = "full"

    @property
    def d(self) -> int:
        return self.source.d

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    @property
    def rows(self) -> int:
        return sum(b.rows for b in self.blocks)

    @property
    def max_order(self) -> int:
        return max((b.order for b in self.blocks), default=0)

    def __add__(self, other: "SymbolFamily") -> "SymbolFamily":
        if other.source != self.source or other.basis.shape != self.basis.shape \
                or not np.allclose(other.basis, self.basis):
            raise ValueError("stacked symbols must share their source space")
        return SymbolFamily(self.source, self.metric, self.basis,
                            self.blocks + other.blocks, self.domain)

    def orthonormal_source(self) -> np.ndarray:
        """Basis of the source subspace orthonormal in the fiber metric."""
        G = self.basis.T @ self.metric.gram(self.source) @ self.basis
        S = np.linalg.cholesky(G).T
        return self.basis @ np.linalg.inv(S)

    def _row_weight(self, block) -> np.ndarray:
        return np.linalg.cholesky(block.gram).T if block.rows else block.gram

    def evaluate(self, xi, orthonormal: bool = False) -> np.ndarray:
        """Stacked matrix at xi; orthonormal=True uses fiber-orthonormal bases."""
        if not orthonormal:
            if not self.blocks:
                return np.zeros((0, self.n))
            return np.vstack([b.evaluate(xi) @ self.basis for b in self.blocks])
        B = self.orthonormal_source()
        if not self.blocks:
            return np.zeros((0, self.n))
        return np.vstack([self._row_weight(b) @ b.evaluate(xi) @ B for b in self.blocks])

    def expand(self, u, w) -> list:
        """Per block, orthonormal coefficient matrices of lambda^t at u + lambda*w."""
        B = self.orthonormal_source()
        out = []
        for b in self.blocks:
            W = self._row_weight(b)
            out.append((b.order, [W @ c @ B for c in b.expand(u, w)]))
        return out


def compose(outer: SymbolBlock, inner: SymbolBlock, name: str | None = None) -> SymbolBlock:
    """Symbol of a composition, as the product of the two matrix polynomials."""
    C = np.tensordot(outer.coeffs, inner.coeffs, axes=([-1], [-2]))
    # axes now: outer slots, outer rows, inner slots, inner cols
    r1, r2 = outer.order, inner.order
    perm = list(range(r1)) + list(range(r1 + 1, r1 + 1 + r2)) + [r1, r1 + 1 + r2]
    C = np.transpose(C, perm)
    return SymbolBlock(name or f"{outer.name}*{inner.name}", r1 + r2, C, outer.target, outer.gram)


# construction ----------------------------------------------------------------

def _domain_basis(bd: Bidegree, domain: str) -> np.ndarray:
    if domain == "full":
        return np.eye(bd.dim)
    if domain == "bianchi":
        return np.array(bianchi_basis(bd))
    if domain == "symmetric":
        if bd.k != bd.m:
            raise ValueError("symmetric domain needs k == m")
        return null_basis(involution_matrix(bd) - np.eye(bd.dim))
    raise ValueError(f"unknown domain {domain!r}")


def _wedge_or_zero(bd: Bidegree, xi, slot: str) -> np.ndarray:
    dk, dm = (1, 0) if slot == "form" else (0, 1)
    if not bd.valid_shift(dk, dm):
        return np.zeros((ncomb(bd.d, bd.k + dk) * ncomb(bd.d, bd.m + dm), bd.dim))
    return wedge_matrix(bd, xi, slot)


def _interior_or_zero(bd: Bidegree, X, slot: str) -> np.ndarray:
    deg = bd.k if slot == "form" else bd.m
    if deg == 0:
        return np.zeros((0, bd.dim))
    return interior_matrix(bd, X, slot)


def _trace_or_zero(bd: Bidegree, kind: str, metric: Metric, normal) -> np.ndarray:
    k = bd.k - (kind[0] == "n")
    m = bd.m - (kind[1] == "n")
    if k < 0 or m < 0:
        return np.zeros((0, bd.dim))
    return boundary_trace_matrix(bd, kind, metric, normal)


def _boundary_dim(d: int, k: int, m: int) -> int:
    return ncomb(d - 1, k) * ncomb(d - 1, m)


def _target(bd: Bidegree, dk: int, dm: int, op: str) -> Bidegree:
    if not bd.valid_shift(dk, dm):
        raise ValueError(f"operator {op} is not defined on bidegree {bd}")
    return bd.shift(dk, dm)


def _interior_block(op: str, bd: Bidegree, metric: Metric) -> SymbolBlock:
    d = bd.d
    E = np.eye(d)
    sharp = metric.ginv
    if op in ("d", "dG", "dV"):
        slot = "vector" if op == "dV" else "form"
        tgt = _target(bd, *((0, 1) if op == "dV" else (1, 0)), op)
        C = np.array([wedge_matrix(bd, E[a], slot) for a in range(d)])
    elif op in ("delta", "deltaG", "deltaV"):
        slot = "vector" if op == "deltaV" else "form"
        tgt = _target(bd, *((0, -1) if op == "deltaV" else (-1, 0)), op)
        C = np.array([-interior_matrix(bd, sharp[:, a], slot) for a in range(d)])
    elif op == "H":
        tgt = _target(bd, 1, 1, op)
        C = np.empty((d, d, tgt.dim, bd.dim))
        for a in range(d):
            for b in range(d):
                C[a, b] = 0.5 * (wedge_matrix(bd.shift(0, 1), E[a], "form")
                                 @ wedge_matrix(bd, E[b], "vector")
                                 + wedge_matrix(bd.shift(1, 0), E[a], "vector")
                                 @ wedge_matrix(bd, E[b], "form"))
    elif op == "Hstar":
        tgt = _target(bd, -1, -1, op)
        C = np.empty((d, d, tgt.dim, bd.dim))
        for a in range(d):
            for b in range(d):
                C[a, b] = 0.5 * (interior_matrix(bd.shift(0, -1), sharp[:, a], "form")
                                 @ interior_matrix(bd, sharp[:, b], "vector")
                                 + interior_matrix(bd.shift(-1, 0), sharp[:, a], "vector")
                                 @ interior_matrix(bd, sharp[:, b], "form"))
    else:
        raise ValueError(f"unknown interior operator {op!r}")
    if op in ("dG", "deltaG", "H", "Hstar"):
        C = np.einsum("ij,...jk->...ik", metric.bianchi_projector(tgt), C)
    return SymbolBlock(op, OP_ORDERS[op], C, str(tgt), metric.gram(tgt))


def _boundary_projector(d: int, k: int, m: int) -> np.ndarray:
    if _boundary_dim(d, k, m) == 0:
        return np.zeros((0, 0))
    return Metric.euclidean(d - 1).bianchi_projector(Bidegree(k, m, d - 1))


def _trace_block(op: str, bd: Bidegree, metric: Metric, normal) -> SymbolBlock:
    kind = op[1:3]
    k = bd.k - (kind[0] == "n")
    m = bd.m - (kind[1] == "n")
    if k < 0 or m < 0:
        raise ValueError(f"boundary operator {op} is not defined on bidegree {bd}")
    C = boundary_trace_matrix(bd, kind, metric, normal)
    if op.endswith("G") and C.shape[0]:
        C = _boundary_projector(bd.d, k, m) @ C
    return SymbolBlock(op, 0, C, f"boundary({k},{m})", np.eye(C.shape[0]))


def _tangential_rows(metric: Metric, normal) -> np.ndarray:
    """Row a: boundary orthonormal components of the coordinate covector dx^a."""
    frame = np.linalg.inv(adapted_coframe(metric, normal))
    return frame[:, :-1]


def _connecting_block(op: str, bd: Bidegree, metric: Metric, normal) -> SymbolBlock:
    """Symbols of the first-order boundary operators T and T*."""
    d, k, m = bd.d, bd.k, bd.m
    E = np.eye(d)
    tan = _tangential_rows(metric, normal)
    if op == "T":
        bk, bm = k, m
    else:
        if k == 0 or m == 0:
            raise ValueError(f"boundary operator {op} is not defined on bidegree {bd}")
        bk, bm = k - 1, m - 1
    rows = _boundary_dim(d, bk, bm)
    C = np.zeros((d, rows, bd.dim))
    if rows:
        for a in range(d):
            if op == "T":
                # 1/2 (nt d - d_bdry nt) + 1/2 (tn d_V - d_bdry,V tn)
                up = bd.shift(1, 0) if bd.valid_shift(1, 0) else None
                if up is not None:
                    C[a] += 0.5 * _trace_or_zero(up, "nt", metric, normal) @ wedge_matrix(bd, E[a], "form")
                if k >= 1:
                    sub = Bidegree(k - 1, m, d - 1)
                    C[a] -= 0.5 * _wedge_or_zero(sub, tan[a], "form") @ _trace_or_zero(bd, "nt", metric, normal)
                up = bd.shift(0, 1) if bd.valid_shift(0, 1) else None
                if up is not None:
                    C[a] += 0.5 * _trace_or_zero(up, "tn", metric, normal) @ wedge_matrix(bd, E[a], "vector")
                if m >= 1:
                    sub = Bidegree(k, m - 1, d - 1)
                    C[a] -= 0.5 * _wedge_or_zero(sub, tan[a], "vector") @ _trace_or_zero(bd, "tn", metric, normal)
            else:
                # -1/2 (tn delta + delta_bdry tn) - 1/2 (nt delta_V + delta_bdry,V nt)
                X = metric.ginv[:, a]
                C[a] += 0.5 * _trace_or_zero(bd.shift(-1, 0), "tn", metric, normal) @ interior_matrix(bd, X, "form")
                if k <= d - 1:
                    sub = Bidegree(k, m - 1, d - 1)
                    C[a] += 0.5 * _interior_or_zero(sub, tan[a], "form") @ _trace_or_zero(bd, "tn", metric, normal)
                C[a] += 0.5 * _trace_or_zero(bd.shift(0, -1), "nt", metric, normal) @ interior_matrix(bd, X, "vector")
                if m <= d - 1:
                    sub = Bidegree(k - 1, m, d - 1)
                    C[a] += 0.5 * _interior_or_zero(sub, tan[a], "vector") @ _trace_or_zero(bd, "nt", metric, normal)
    return SymbolBlock(op, 1, C, f"boundary({bk},{bm})", np.eye(rows))


_COMPOSITE = {
    "BG": (("PttG", 1.0), ("PtnG", 1.0)),
    "BGstar": (("PntG", 1.0), ("PnnG", 1.0)),
    "BH": (("Ptt", 1.0), ("T", -1.0)),
    "BHstar": (("Tstar", 1.0), ("Pnn", 1.0)),
}


def _defined(op: str, bd: Bidegree) -> bool:
    if op in TRACE_OPS:
        return bd.k - (op[1] == "n") >= 0 and bd.m - (op[2] == "n") >= 0
    if op == "Tstar":
        return bd.k >= 1 and bd.m >= 1
    return True


def build_symbol(op_kind: str, bidegree: Bidegree, metric: Metric, normal=None,
                 domain: str | None = None) -> SymbolFamily:
    """Symbol family of one operator acting on ``bidegree``.

    Boundary operators need the conormal covector ``normal``.  ``domain``
    defaults to Bianchi forms for the Bianchi operators and H, and to all
    double forms otherwise.
    """
    if metric.d != bidegree.d:
        raise ValueError("metric and bidegree dimensions differ")
    if domain is None:
        domain = "bianchi" if op_kind in ("dG", "deltaG", "H", "Hstar") else "full"
    basis = _domain_basis(bidegree, domain)
    if op_kind in INTERIOR_OPS:
        blocks = [_interior_block(op_kind, bidegree, metric)]
    elif op_kind in BOUNDARY_OPS:
        if normal is None:
            raise ValueError(f"boundary operator {op_kind} needs a conormal")
        if bidegree.d < 2:
            raise ValueError("boundary operators need d >= 2")
        if op_kind in _COMPOSITE:
            blocks = []
            for part, sign in _COMPOSITE[op_kind]:
                if _defined(part, bidegree):
                    b = build_symbol(part, bidegree, metric, normal, domain).blocks[0]
                    b.coeffs = sign * b.coeffs
                    blocks.append(b)
        elif op_kind in TRACE_OPS:
            blocks = [_trace_block(op_kind, bidegree, metric, normal)]
        else:
            blocks = [_connecting_block(op_kind, bidegree, metric, normal)]
    else:
        raise ValueError(f"unknown operator {op_kind!r}")
    return SymbolFamily(bidegree, metric, basis, blocks, domain)


def stack(families) -> SymbolFamily:
    families = list(families)
    if not families:
        raise ValueError("empty symbol stack")
    out = families[0]
    for f in families[1:]:
        out = out + f
    return out


def fiber_adjoint(block: SymbolBlock, xi, source_gram: np.ndarray) -> np.ndarray:
    """Fiber-metric adjoint of the block evaluated at real xi."""
    S = block.evaluate(xi)
    return np.linalg.solve(source_gram, S.T @ block.gram)


# verdicts --------------------------------------------------------------------

@dataclass
class EllipticityVerdict:
    interior_injective: bool
    interior_min_sv: float
    boundary_injective: bool | None = None
    boundary_min_sv: float | None = None
    samples: int = 0
    metric_points: int = 0
    seed: int | None = None
    witnesses: list = field(default_factory=list)
    indeterminate: bool = False
    notes: list = field(default_factory=list)
    mplus_dims: list = field(default_factory=list)

    @property
    def elliptic(self) -> bool:
        return (not self.indeterminate and self.interior_injective
                and self.boundary_injective is not False)

    def to_dict(self) -> dict:
        return {
            "elliptic": self.elliptic,
            "indeterminate": self.indeterminate,
            "interior_injective": self.interior_injective,
            "interior_min_sv": self.interior_min_sv,
            "boundary_injective": self.boundary_injective,
            "boundary_min_sv": self.boundary_min_sv,
            "samples": self.samples,
            "metric_points": self.metric_points,
            "seed": self.seed,
            "mplus_dims": self.mplus_dims,
            "notes": self.notes,
            "witnesses": self.witnesses,
        }


def _vec(v) -> dict:
    v = np.asarray(v)
    return {"re": np.real(v).tolist(), "im": np.imag(v).tolist()}


def sphere_points(n: int, dim: int, seed: int) -> np.ndarray:
    """Deterministic low-discrepancy points on the unit sphere in R^dim."""
    if dim == 1:
        return np.array([[1.0 if i % 2 == 0 else -1.0] for i in range(n)])
    h = qmc.Halton(d=dim, scramble=True, seed=seed).random(n)
    z = ndtri(np.clip(h, 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def interior_injectivity(stacked: SymbolFamily, samples: int = 200, seed: int = 0,
                         tol: float = SV_TOL, points=None) -> EllipticityVerdict:
    """Smallest singular value of the stacked symbol over unit covectors."""
    if not stacked.blocks:
        raise ValueError("empty symbol stack")
    metric = stacked.metric
    if points is None:
        points = sphere_points(samples, stacked.d, seed) @ metric.coframe
    worst, witness = np.inf, None
    for xi in points:
        A = stacked.evaluate(xi, orthonormal=True)
        if A.shape[0] == 0:
            s_min, v = 0.0, np.eye(stacked.n)[0]
        else:
            _, s, vt = np.linalg.svd(A)
            s_min = s[-1] if len(s) == stacked.n else 0.0
            v = vt[-1]
        if s_min < worst:
            worst = float(s_min)
            witness = (xi, stacked.orthonormal_source() @ v)
    ok = worst > tol
    wit = [] if ok else [{"kind": "interior", "metric": metric.g.tolist(),
                          "xi": witness[0].tolist(), "vector": _vec(witness[1])}]
    return EllipticityVerdict(ok, worst, samples=len(points), seed=seed, witnesses=wit)


# decaying solutions -----------------------------------------------------------

@dataclass
class BoundarySplit:
    """Conormal dr (unit) and tangential covector xi' (unit, orthogonal to dr)."""
    metric: Metric
    normal: np.ndarray
    xi_t: np.ndarray

    @classmethod
    def make(cls, metric: Metric, normal, xi_t, normalize: bool = True) -> "BoundarySplit":
        n = np.asarray(normal, dtype=float)
        n = n / metric.norm(n)
        t = np.asarray(xi_t, dtype=float)
        t = t - (t @ metric.ginv @ n) * n
        if metric.norm(t) < 1e-12:
            raise ValueError("tangential covector is parallel to the conormal")
        if normalize:
            t = t / metric.norm(t)
        return cls(metric, n, t)

    @property
    def u(self) -> np.ndarray:
        return self.xi_t.astype(complex)

    @property
    def w(self) -> np.ndarray:
        return 1j * self.normal


@dataclass
class DecayingSpace:
    """Decaying solutions u(s) = exp(lambda s) sum_l c_l s^l / l! of the symbol ODE.

    ``chains[j]`` has shape (L, n_full) with rows c_0..c_{L-1} in coordinate
    coefficients; ``coords[j]`` holds the same in the orthonormal source basis.
    """
    lambdas: list
    chains: list
    coords: list
    residuals: list
    indeterminate: bool = False
    reason: str = ""
    normal_dim: int = 0

    @property
    def dim(self) -> int:
        return len(self.lambdas)


def _poly_mul(a: list, b: list) -> list:
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i + j] = out[i + j] + x @ y if not np.isscalar(x) and not np.isscalar(y) \
                else out[i + j] + x * y
    return out


def _normal_polynomial(expanded: list, R: int, xx: list) -> list:
    """Coefficients of sum_j (xi.xi)^(R - r_j) P_j^T P_j."""
    n = expanded[0][1][0].shape[1]
    N = [np.zeros((n, n), dtype=complex) for _ in range(2 * R + 1)]
    for r, P in expanded:
        if P[0].shape[0] == 0:
            continue
        PtP = _poly_mul([p.T for p in P], P)
        scal = [1.0]
        for _ in range(R - r):
            scal = _poly_mul(scal, xx)
        for i, s in enumerate(scal):
            for j, M in enumerate(PtP):
                N[i + j] += s * M
    return N


def _taylor(P: list, lam: complex, i: int) -> np.ndarray:
    """P^{(i)}(lam) / i! for a coefficient list P."""
    out = np.zeros_like(P[0])
    for t in range(i, len(P)):
        out = out + math.comb(t, i) * lam ** (t - i) * P[t]
    return out


def _toeplitz(polys: list, lam: complex, L: int) -> np.ndarray:
    """Action on (c_0..c_{L-1}) of the ODE operators at exp(lam s) q(s)."""
    n = polys[0][0].shape[1]
    rows = []
    for P in polys:
        m = P[0].shape[0]
        if m == 0:
            continue
        D = [_taylor(P, lam, i) for i in range(len(P))]
        T = np.zeros((m * L, n * L), dtype=complex)
        for ell in range(L):
            for i, Di in enumerate(D):
                if ell + i < L:
                    T[ell * m:(ell + 1) * m, (ell + i) * n:(ell + i + 1) * n] = Di
        rows.append(T)
    return np.vstack(rows) if rows else np.zeros((0, n * L), dtype=complex)


def _cluster(values: np.ndarray, rtol: float) -> list:
    """Single-linkage groups of complex numbers within rtol*max(1,|z|)."""
    groups = []
    for z in sorted(values, key=lambda c: (c.real, c.imag)):
        for g in groups:
            if any(abs(z - y) <= rtol * max(1.0, abs(z)) for y in g):
                g.append(z)
                break
        else:
            groups.append([z])
    merged = True
    while merged:
        merged = False
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                if any(abs(a - b) <= rtol * max(1.0, abs(a)) for a in groups[i] for b in groups[j]):
                    groups[i] += groups.pop(j)
                    merged = True
                    break
            if merged:
                break
    return groups


def _null_vectors(T: np.ndarray, rtol: float):
    if T.shape[0] == 0:
        return np.eye(T.shape[1], dtype=complex), np.zeros(T.shape[1])
    _, s, vh = np.linalg.svd(T)
    scale = s[0] if len(s) and s[0] > 0 else 1.0
    full = np.zeros(T.shape[1])
    full[:len(s)] = s
    keep = full <= rtol * scale
    return vh.conj().T[:, keep], full


def decaying_space(stacked: SymbolFamily, split: BoundarySplit, filtered: bool = True,
                   cluster_rtol: float = CLUSTER_RTOL) -> DecayingSpace:
    """Decaying solutions of the stacked symbol ODE along the inward normal.

    With ``filtered=False`` the decaying solutions of the square normal
    operator are returned instead.
    """
    if not stacked.blocks:
        raise ValueError("empty symbol stack")
    g_inv = stacked.metric.ginv
    u, w = split.u, split.w
    expanded = stacked.expand(u, w)
    R = stacked.max_order
    n = stacked.n
    xx = [u @ g_inv @ u, 2 * (u @ g_inv @ w), w @ g_inv @ w]
    N = _normal_polynomial(expanded, R, xx)
    q = 2 * R
    lead = N[q]
    if np.linalg.cond(lead) > 1e10:
        return DecayingSpace([], [], [], [], True, "interior symbol degenerate along the conormal")
    A = np.zeros((q * n, q * n), dtype=complex)
    B = np.eye(q * n, dtype=complex)
    for i in range(q - 1):
        A[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = np.eye(n)
    for i in range(q):
        A[(q - 1) * n:, i * n:(i + 1) * n] = -N[i]
    B[(q - 1) * n:, (q - 1) * n:] = lead
    roots = scipy.linalg.eig(A, B, right=False)
    scale = max(1.0, float(np.max(np.abs(roots))))
    if np.any(np.abs(roots.real) <= 1e-8 * scale):
        return DecayingSpace([], [], [], [], True, "root on the imaginary axis")
    stable = roots[roots.real < 0]
    groups = _cluster(stable, GROUP_RTOL)
    N_polys = [N]
    A_polys = [P for _, P in expanded]
    onb = stacked.orthonormal_source()
    lambdas, chains, coords, residuals = [], [], [], []
    reason = ""
    for grp in groups:
        lam = complex(np.mean(grp))
        L = len(grp)
        spread = max(abs(z - lam) for z in grp)
        if spread > cluster_rtol * max(1.0, abs(lam)) and L == 1:
            reason = "isolated root below resolution"
        _, sN = _null_vectors(_toeplitz(N_polys, lam, L), cluster_rtol)
        if int(np.sum(sN <= cluster_rtol * max(sN.max(), 1.0))) != L:
            return DecayingSpace([], [], [], [], True,
                                 f"root cluster near {lam:.6g} not resolved (multiplicity {L})",
                                 normal_dim=len(stable))
        polys = A_polys if filtered else N_polys
        T = _toeplitz(polys, lam, L)
        V, _ = _null_vectors(T, cluster_rtol)
        if V.shape[1]:
            # orthonormal basis of the solution space at this root
            V, _ = np.linalg.qr(V)
        for col in V.T:
            c = col.reshape(L, n)
            res = float(np.linalg.norm(_toeplitz(A_polys if filtered else N_polys, lam, L) @ col)
                        / np.linalg.norm(col))
            lambdas.append(lam)
            coords.append(c)
            chains.append(c @ onb.T)
            residuals.append(res)
    bad = [r for r in residuals if r > RESIDUAL_TOL]
    indeterminate = bool(bad)
    if bad:
        reason = f"residual {max(bad):.2e} above {RESIDUAL_TOL:g}"
    return DecayingSpace(lambdas, chains, coords, residuals, indeterminate, reason,
                         normal_dim=len(stable))


def _l2_gram(space: DecayingSpace) -> np.ndarray:
    """L^2(0, inf) Gram matrix of the basis solutions in orthonormal fiber coordinates."""
    k = space.dim
    G = np.zeros((k, k), dtype=complex)
    for a in range(k):
        for b in range(k):
            la, lb = space.lambdas[a], space.lambdas[b]
            ca, cb = space.coords[a], space.coords[b]
            z = -(np.conj(la) + lb)
            tot = 0
            for i in range(ca.shape[0]):
                for j in range(cb.shape[0]):
                    tot += (np.conj(ca[i]) @ cb[j]) * math.comb(i + j, i) / z ** (i + j + 1)
            G[a, b] = tot
    return 0.5 * (G + G.conj().T)


def boundary_matrix(boundary: SymbolFamily, space: DecayingSpace, split: BoundarySplit) -> np.ndarray:
    """Boundary data of each basis solution at s = 0 (columns)."""
    expanded = boundary.expand(split.u, split.w)
    rows = boundary.rows
    Xi = np.zeros((rows, space.dim), dtype=complex)
    for j, (lam, c) in enumerate(zip(space.lambdas, space.coords)):
        col = []
        for _, P in expanded:
            if P[0].shape[0] == 0:
                continue
            v = sum(_taylor(P, lam, i) @ c[i] for i in range(min(len(P), c.shape[0])))
            col.append(v)
        if col:
            Xi[:, j] = np.concatenate(col)
    return Xi


def lopatinskii_injectivity(boundary: SymbolFamily, space: DecayingSpace, split: BoundarySplit,
                            tol: float = SV_TOL) -> dict:
    """Injectivity of the boundary symbol restricted to the decaying solutions."""
    if space.indeterminate:
        return {"injective": None, "min_sv": None, "vacuous": False,
                "indeterminate": True, "reason": space.reason}
    if space.dim == 0:
        return {"injective": True, "min_sv": math.inf, "vacuous": True, "indeterminate": False}
    G = _l2_gram(space)
    Rc = np.linalg.cholesky(G).conj().T
    Xi = boundary_matrix(boundary, space, split) @ np.linalg.inv(Rc)
    if Xi.shape[0] == 0:
        s_min, v = 0.0, np.eye(space.dim)[0]
    else:
        _, s, vh = np.linalg.svd(Xi)
        s_min = float(s[-1]) if len(s) == space.dim else 0.0
        v = vh[-1].conj()
    out = {"injective": s_min > tol, "min_sv": s_min, "vacuous": False, "indeterminate": False}
    if s_min <= tol:
        coef = np.linalg.solve(Rc, v)
        sol = [{"lambda": _vec(space.lambdas[j]), "weight": _vec(coef[j]),
                "chain": _vec(space.chains[j])} for j in range(space.dim) if abs(coef[j]) > 1e-12]
        out["witness"] = sol
    return out


# chain levels ----------------------------------------------------------------

@dataclass(frozen=True)
class LevelSpec:
    """One level of a chain: (A*_{k-1} + A_k, B*_{k-1}) on a source bidegree."""
    d: int
    k: int
    m: int
    interior: tuple
    boundary: tuple
    domain: str = "full"
    samples: int = 200
    metric_points: int = 5
    seed: int = 0
    name: str = ""

    @property
    def bidegree(self) -> Bidegree:
        return Bidegree(self.k, self.m, self.d)


def chain_level(kind: str, d: int, k: int, m: int = 0, **kw) -> LevelSpec:
    """Named levels of the de Rham and Bianchi chains, plus a broken control."""
    if kind == "de_rham":
        interior = (("delta",) if k >= 1 else ()) + (("d",) if k < d else ())
        return LevelSpec(d, k, 0, interior, ("Pnt",) if k >= 1 else (), "full", name=kind, **kw)
    if kind in ("bianchi", "bianchi_dirichlet"):
        if not k < m:
            raise ValueError("first-order Bianchi levels need k < m")
        interior = (("deltaG",) if k >= 1 else ()) + ("dG",)
        bc = ("BGstar",) if kind == "bianchi" else ("BG",)
        return LevelSpec(d, k, m, interior, bc, "bianchi", name=kind, **kw)
    if kind in ("H_normal", "H_tangential"):
        if k != m:
            raise ValueError("H levels need k == m")
        interior = (("delta",) if m >= 1 else ()) + ("H",)
        bc = ("Pnn", "Pnt") if kind == "H_normal" else ("BH",)
        bc = tuple(b for b in bc if _defined(b, Bidegree(k, m, d)))
        return LevelSpec(d, k, m, interior, bc, "symmetric", name=kind, **kw)
    if kind == "hessian_junction":
        interior = (("deltaG",) if m >= 1 else ()) + ("H",)
        return LevelSpec(d, m, m, interior, ("BGstar",), "bianchi", name=kind, **kw)
    if kind == "broken":
        # tangential traces only, in both the form and the vector slot
        base = chain_level(kw.pop("base", "H_tangential"), d, k, m, **kw)
        return LevelSpec(d, k, m, base.interior, ("Ptt",), base.domain,
                         base.samples, base.metric_points, base.seed, name="broken")
    raise ValueError(f"unknown chain level {kind!r}")


def _families(spec: LevelSpec, metric: Metric, normal=None):
    bd = spec.bidegree
    interior = stack(build_symbol(op, bd, metric, domain=spec.domain) for op in spec.interior)
    if normal is None:
        return interior, None
    parts = [build_symbol(op, bd, metric, normal, spec.domain) for op in spec.boundary]
    boundary = stack(parts) if parts else SymbolFamily(bd, metric, interior.basis, [], spec.domain)
    return interior, boundary


def metric_points(d: int, count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [Metric.euclidean(d)] + [random_metric(d, rng) for _ in range(count - 1)]


def od_ellipticity_report(spec: LevelSpec) -> EllipticityVerdict:
    """Interior and boundary injectivity over sampled points, conormals and xi'."""
    d = spec.d
    metrics = metric_points(d, spec.metric_points, spec.seed)
    per = -(-spec.samples // len(metrics))
    int_min, bnd_min = np.inf, np.inf
    witnesses, notes, dims = [], [], set()
    indeterminate = False
    boundary_ok = True
    count = 0
    for idx, metric in enumerate(metrics):
        seed = spec.seed + 7919 * idx
        interior, _ = _families(spec, metric)
        iv = interior_injectivity(interior, per, seed)
        int_min = min(int_min, iv.interior_min_sv)
        witnesses += iv.witnesses
        normals = sphere_points(per, d, seed + 1) @ metric.coframe
        tangents = sphere_points(per, d, seed + 2) @ metric.coframe
        for nrm, tan in zip(normals, tangents):
            if d == 1:
                raise ValueError("boundary test needs d >= 2")
            try:
                split = BoundarySplit.make(metric, nrm, tan)
            except ValueError:
                split = BoundarySplit.make(metric, nrm, np.roll(tan, 1) + 0.5)
            _, boundary = _families(spec, metric, split.normal)
            space = decaying_space(interior, split)
            res = lopatinskii_injectivity(boundary, space, split)
            count += 1
            if res["indeterminate"]:
                indeterminate = True
                notes.append(res["reason"])
                continue
            dims.add(space.dim)
            bnd_min = min(bnd_min, res["min_sv"])
            if not res["injective"]:
                if boundary_ok:
                    witnesses.append({"kind": "boundary", "metric": metric.g.tolist(),
                                      "normal": split.normal.tolist(), "xi_t": split.xi_t.tolist(),
                                      "solution": res["witness"]})
                boundary_ok = False
    return EllipticityVerdict(
        interior_injective=int_min > SV_TOL, interior_min_sv=float(int_min),
        boundary_injective=boundary_ok, boundary_min_sv=float(bnd_min),
        samples=count, metric_points=len(metrics), seed=spec.seed,
        witnesses=witnesses, indeterminate=indeterminate, notes=sorted(set(notes)),
        mplus_dims=sorted(dims))


# chain symbols ---------------------------------------------------------------

def chain_ops(kind: str, d: int, m: int = 0) -> list:
    """Consecutive operators (name, source bidegree) of a chain."""
    if kind == "de_rham":
        return [("d", Bidegree(k, 0, d)) for k in range(d)]
    if kind == "bianchi":
        ops = [("dG", Bidegree(k, m, d)) for k in range(m)]
        if m < d:
            ops.append(("H", Bidegree(m, m, d)))
        ops += [("dG", Bidegree(k, m + 1, d)) for k in range(m + 1, d)]
        return ops
    raise ValueError(f"unknown chain {kind!r}")


def symbol_nilpotency(kind: str, d: int, m: int = 0, samples: int = 50, seed: int = 0,
                      metric: Metric | None = None) -> list:
    """Max |sigma_{k+1}(xi) sigma_k(xi)| / (|sigma_{k+1}| |sigma_k|) per junction."""
    metric = metric or Metric.euclidean(d)
    ops = chain_ops(kind, d, m)
    pts = sphere_points(samples, d, seed) @ metric.coframe
    out = []
    for (op1, bd1), (op2, bd2) in zip(ops, ops[1:]):
        f1 = build_symbol(op1, bd1, metric)
        f2 = build_symbol(op2, bd2, metric)
        worst = 0.0
        for xi in pts:
            A1 = f1.blocks[0].evaluate(xi) @ f1.basis
            A2 = f2.blocks[0].evaluate(xi)
            denom = max(np.linalg.norm(A1, 2) * np.linalg.norm(A2, 2), 1e-300)
            worst = max(worst, float(np.linalg.norm(A2 @ A1, 2) / denom))
        out.append({"first": op1, "source": str(bd1), "second": op2, "max_error": worst})
    return out
