"""Pointwise algebra of double forms over R^d.

A (k, m) double form is an element of Lambda^k (x) Lambda^m of the cotangent
space.  Coefficients are stored in the coordinate coframe, indexed by pairs
(I, J) of strictly increasing multi-indices in lexicographic order, I major.
Every tensorial operation is a constant matrix on that coefficient vector;
metric dependence enters only through :class:`Metric`.

Example
-------
>>> bd = Bidegree(1, 1, 2)
>>> G = bianchi_matrix(bd, "G")
>>> psi = DoubleForm.basis(bd, (0,), (1,))
>>> bianchi_sum(psi, "G").coeffs
array([-1.])
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

RANK_RTOL = 1e-10


def ncomb(d: int, k: int) -> int:
    return comb(d, k) if 0 <= k <= d else 0


@dataclass(frozen=True)
class Bidegree:
    """Bidegree (k, m) of a double form over R^d.

    d = 1 is allowed so that boundary forms of a surface in R^2 can reuse the
    same tables.
    """

    k: int
    m: int
    d: int

    def __post_init__(self):
        if not 1 <= self.d <= 4:
            raise ValueError(f"dimension d={self.d} outside 1..4")
        if not (0 <= self.k <= self.d and 0 <= self.m <= self.d):
            raise ValueError(f"bidegree ({self.k},{self.m}) invalid for d={self.d}")

    @property
    def dim(self) -> int:
        return comb(self.d, self.k) * comb(self.d, self.m)

    @property
    def T(self) -> "Bidegree":
        return Bidegree(self.m, self.k, self.d)

    def shift(self, dk: int, dm: int) -> "Bidegree":
        return Bidegree(self.k + dk, self.m + dm, self.d)

    def valid_shift(self, dk: int, dm: int) -> bool:
        return 0 <= self.k + dk <= self.d and 0 <= self.m + dm <= self.d

    def __str__(self):
        return f"({self.k},{self.m};d={self.d})"


@lru_cache(maxsize=None)
def multi_indices(d: int, k: int) -> tuple:
    return tuple(combinations(range(d), k))


@lru_cache(maxsize=None)
def _position(d: int, k: int) -> dict:
    return {I: n for n, I in enumerate(multi_indices(d, k))}


def basis_enumerate(bd: Bidegree) -> list:
    """Ordered list of (I, J) index pairs; indices are 0-based."""
    return [(I, J) for I in multi_indices(bd.d, bd.k) for J in multi_indices(bd.d, bd.m)]


def _merge(I: tuple, K: tuple):
    """Sign and sorted union of dx^I ^ dx^K, or None if they overlap."""
    if set(I) & set(K):
        return None
    # parity of the shuffle = number of pairs (i in I, j in K) with i > j
    inversions = sum(1 for i in I for j in K if i > j)
    return (-1) ** inversions, tuple(sorted(I + K))


@lru_cache(maxsize=None)
def exterior_tables(d: int, k: int):
    """Wedge and contraction tables on Lambda^k(R^d) in the coordinate basis.

    Returns ``(eps, iota)`` with ``eps[a]`` the matrix of dx^a ^ (.) and
    ``iota[a]`` the matrix of the contraction with d/dx^a.
    """
    src = multi_indices(d, k)
    eps = np.zeros((d, ncomb(d, k + 1), len(src)))
    iota = np.zeros((d, ncomb(d, k - 1), len(src)))
    for col, I in enumerate(src):
        for a in range(d):
            merged = _merge((a,), I)
            if merged is not None:
                sign, K = merged
                eps[a, _position(d, k + 1)[K], col] = sign
            if a in I:
                p = I.index(a)
                K = I[:p] + I[p + 1:]
                iota[a, _position(d, k - 1)[K], col] = (-1) ** p
    eps.setflags(write=False)
    iota.setflags(write=False)
    return eps, iota


def _eps(d, k, xi):
    return np.tensordot(np.asarray(xi, dtype=float), exterior_tables(d, k)[0], axes=1)


def _iota(d, k, X):
    return np.tensordot(np.asarray(X, dtype=float), exterior_tables(d, k)[1], axes=1)


def _check_shift(bd: Bidegree, dk: int, dm: int, what: str) -> Bidegree:
    if not bd.valid_shift(dk, dm):
        raise ValueError(f"{what} not defined on bidegree {bd}")
    return bd.shift(dk, dm)


@dataclass(frozen=True)
class FiberMap:
    """A tensorial map between two bidegree slots, realised as a dense matrix."""

    source: Bidegree
    target: Bidegree
    matrix: np.ndarray
    tag: str = ""

    def __post_init__(self):
        if self.matrix.shape != (self.target.dim, self.source.dim):
            raise ValueError(f"{self.tag}: matrix shape {self.matrix.shape} does not match "
                             f"{self.source} -> {self.target}")

    def __call__(self, psi: "DoubleForm") -> "DoubleForm":
        if psi.bidegree != self.source:
            raise ValueError(f"{self.tag} expects {self.source}, got {psi.bidegree}")
        return DoubleForm(self.target, self.matrix @ psi.coeffs)

    def __matmul__(self, other: "FiberMap") -> "FiberMap":
        if other.target != self.source:
            raise ValueError(f"cannot compose {self.tag} after {other.tag}")
        return FiberMap(other.source, self.target, self.matrix @ other.matrix,
                        f"{self.tag}*{other.tag}")


# metric-independent matrices -------------------------------------------------

def wedge_matrix(bd: Bidegree, xi, slot: str = "form") -> np.ndarray:
    """Matrix of psi -> xi ^ psi (form slot) or xi_V ^ psi (vector slot)."""
    d = bd.d
    if slot == "form":
        _check_shift(bd, 1, 0, "wedge")
        return np.kron(_eps(d, bd.k, xi), np.eye(ncomb(d, bd.m)))
    if slot == "vector":
        _check_shift(bd, 0, 1, "vector wedge")
        return np.kron(np.eye(ncomb(d, bd.k)), _eps(d, bd.m, xi))
    raise ValueError(f"unknown slot {slot!r}")


def interior_matrix(bd: Bidegree, X, slot: str = "form") -> np.ndarray:
    """Matrix of i_X (form slot) or i_X^V (vector slot); X in coordinates."""
    d = bd.d
    if slot == "form":
        if bd.k == 0:
            raise ValueError("contraction of a degree-0 form part")
        return np.kron(_iota(d, bd.k, X), np.eye(ncomb(d, bd.m)))
    if slot == "vector":
        if bd.m == 0:
            raise ValueError("contraction of a degree-0 vector part")
        return np.kron(np.eye(ncomb(d, bd.k)), _iota(d, bd.m, X))
    raise ValueError(f"unknown slot {slot!r}")


@lru_cache(maxsize=None)
def bianchi_matrix(bd: Bidegree, variant: str = "G") -> np.ndarray:
    """Bianchi sum G = sum_a dx^a ^ i^V_a, or its transpose-conjugate G_V."""
    d = bd.d
    if variant == "G":
        if bd.m == 0:
            raise ValueError("Bianchi sum needs a vector degree >= 1")
        if bd.k == d:
            return np.zeros((ncomb(d, bd.k + 1) * ncomb(d, bd.m - 1), bd.dim))
        eps = exterior_tables(d, bd.k)[0]
        iota = exterior_tables(d, bd.m)[1]
        out = sum(np.kron(eps[a], iota[a]) for a in range(d))
    elif variant == "GV":
        if bd.k == 0:
            raise ValueError("vectorial Bianchi sum needs a form degree >= 1")
        if bd.m == d:
            return np.zeros((ncomb(d, bd.k - 1) * ncomb(d, bd.m + 1), bd.dim))
        iota = exterior_tables(d, bd.k)[1]
        eps = exterior_tables(d, bd.m)[0]
        out = sum(np.kron(iota[a], eps[a]) for a in range(d))
    else:
        raise ValueError(f"unknown Bianchi variant {variant!r}")
    out = np.asarray(out, dtype=float)
    out.setflags(write=False)
    return out


def bianchi_target(bd: Bidegree, variant: str) -> Bidegree | None:
    """Target bidegree of G / G_V, or None when it falls outside 0..d."""
    dk, dm = (1, -1) if variant == "G" else (-1, 1)
    return bd.shift(dk, dm) if bd.valid_shift(dk, dm) else None


@lru_cache(maxsize=None)
def involution_matrix(bd: Bidegree) -> np.ndarray:
    tgt = bd.T
    P = np.zeros((tgt.dim, bd.dim))
    pos = {pair: n for n, pair in enumerate(basis_enumerate(tgt))}
    for col, (I, J) in enumerate(basis_enumerate(bd)):
        P[pos[(J, I)], col] = 1.0
    P.setflags(write=False)
    return P


def alpha(k: int, m: int) -> int:
    return k - m + 1


def null_basis(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of ker A from the SVD, rank cut relative to sigma_max."""
    n = A.shape[1]
    if A.shape[0] == 0 or not np.any(A):
        return np.eye(n)
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > rtol * s[0]))
    return vt[rank:].T.copy()


@lru_cache(maxsize=None)
def bianchi_basis(bd: Bidegree) -> np.ndarray:
    """Orthonormal (Euclidean coefficient) basis of the Bianchi subspace.

    The subspace is ker G_V for k <= m and ker G for k >= m; it does not
    depend on the metric.
    """
    if bd.k < bd.m:
        K = bianchi_matrix(bd, "GV") if bd.k > 0 else np.zeros((0, bd.dim))
    else:
        K = bianchi_matrix(bd, "G") if bd.m > 0 else np.zeros((0, bd.dim))
    Q = null_basis(K)
    Q.setflags(write=False)
    return Q


# metric ----------------------------------------------------------------------

def compound(A: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix: minors det A[I, J] over increasing multi-indices."""
    d = A.shape[0]
    idx = multi_indices(d, k)
    if k == 0:
        return np.ones((1, 1))
    C = np.empty((len(idx), len(idx)))
    for r, I in enumerate(idx):
        for c, J in enumerate(idx):
            C[r, c] = np.linalg.det(A[np.ix_(I, J)])
    return C


def _perm_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


class Metric:
    """Metric at a point with its Cholesky orthonormal coframe.

    ``coframe[i] = theta^i`` in coordinates (rows), ``frame[:, i] = E_i``.
    """

    def __init__(self, g):
        g = np.array(g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("metric must be a square matrix")
        if not np.allclose(g, g.T, atol=1e-14 * max(1.0, np.abs(g).max())):
            raise ValueError("metric is not symmetric")
        g = 0.5 * (g + g.T)
        try:
            L = np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise ValueError("metric is not positive definite") from None
        self.g = g
        self.d = g.shape[0]
        self.ginv = np.linalg.inv(g)
        self.chol = L
        self.coframe = L.T
        self.frame = np.linalg.inv(L.T)
        self.sqrt_det = float(np.prod(np.diag(L)))
        self._cache = {}

    @classmethod
    def euclidean(cls, d: int) -> "Metric":
        return cls(np.eye(d))

    def sharp(self, xi) -> np.ndarray:
        return self.ginv @ np.asarray(xi)

    def flat(self, X) -> np.ndarray:
        return self.g @ np.asarray(X)

    def norm(self, xi) -> float:
        xi = np.asarray(xi)
        return float(np.sqrt(np.real(np.conj(xi) @ self.ginv @ xi)))

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def to_frame(self, bd: Bidegree) -> np.ndarray:
        """Matrix taking coordinate coefficients to orthonormal-frame coefficients."""
        def build():
            A = self.frame  # dx^j = sum_i A[j, i] theta^i
            return np.kron(compound(A, bd.k).T, compound(A, bd.m).T)
        return self._memo(("T", bd), build)

    def from_frame(self, bd: Bidegree) -> np.ndarray:
        def build():
            A = self.coframe
            return np.kron(compound(A, bd.k).T, compound(A, bd.m).T)
        return self._memo(("Tinv", bd), build)

    def gram(self, bd: Bidegree) -> np.ndarray:
        """Fiber inner-product matrix in the coordinate basis."""
        def build():
            T = self.to_frame(bd)
            return T.T @ T
        return self._memo(("gram", bd), build)

    def inner(self, psi: "DoubleForm", eta: "DoubleForm"):
        if psi.bidegree != eta.bidegree:
            raise ValueError("inner product of different bidegrees")
        return np.conj(psi.coeffs) @ self.gram(psi.bidegree) @ eta.coeffs

    def trace_matrix(self, bd: Bidegree) -> np.ndarray:
        """tr_g = sum_i i_{E_i} i^V_{E_i}: (k,m) -> (k-1,m-1)."""
        if bd.k == 0 or bd.m == 0:
            raise ValueError(f"metric trace not defined on {bd}")
        d = bd.d
        ik = exterior_tables(d, bd.k)[1]
        im = exterior_tables(d, bd.m)[1]
        return sum(self.ginv[a, b] * np.kron(ik[a], im[b])
                   for a in range(d) for b in range(d))

    def gwedge_matrix(self, bd: Bidegree) -> np.ndarray:
        """psi -> g ^ psi: (k,m) -> (k+1,m+1)."""
        if bd.k == bd.d or bd.m == bd.d:
            raise ValueError(f"g^ not defined on {bd}")
        d = bd.d
        ek = exterior_tables(d, bd.k)[0]
        em = exterior_tables(d, bd.m)[0]
        return sum(self.g[a, b] * np.kron(ek[a], em[b])
                   for a in range(d) for b in range(d))

    def star_matrix(self, bd: Bidegree, slot: str = "form") -> np.ndarray:
        """Hodge star on the form part (or vector part); orientation dx^1^...^dx^d."""
        d = bd.d
        if slot == "vector":
            return involution_matrix(Bidegree(bd.k, d - bd.m, d)).T @ \
                self.star_matrix(bd.T, "form") @ involution_matrix(bd)
        if slot != "form":
            raise ValueError(f"unknown slot {slot!r}")
        k = bd.k
        S = np.zeros((ncomb(d, d - k), ncomb(d, k)))
        for c, I in enumerate(multi_indices(d, k)):
            Ic = tuple(i for i in range(d) if i not in I)
            S[_position(d, d - k)[Ic], c] = _perm_sign(I + Ic)
        A, B = self.frame, self.coframe
        Tk = compound(A, k).T
        Tinv = compound(B, d - k).T
        return np.kron(Tinv @ S @ Tk, np.eye(ncomb(d, bd.m)))

    def volume(self) -> "DoubleForm":
        bd = Bidegree(self.d, 0, self.d)
        return DoubleForm(bd, np.array([self.sqrt_det]))

    def as_form(self) -> "DoubleForm":
        """The metric itself as a symmetric (1,1) form."""
        return DoubleForm(Bidegree(1, 1, self.d), self.g.reshape(-1).copy())

    def bianchi_projector(self, bd: Bidegree) -> np.ndarray:
        """Fiber-orthogonal projector onto the Bianchi subspace."""
        def build():
            Q = bianchi_basis(bd)
            G = self.gram(bd)
            return Q @ np.linalg.solve(Q.T @ G @ Q, Q.T @ G)
        return self._memo(("PG", bd), build)

    def bianchi_restrict(self, bd: Bidegree) -> np.ndarray:
        """Coordinates in ``bianchi_basis(bd)`` of the orthogonal projection."""
        def build():
            Q = bianchi_basis(bd)
            G = self.gram(bd)
            return np.linalg.solve(Q.T @ G @ Q, Q.T @ G)
        return self._memo(("RG", bd), build)


# explicit Bianchi wedge / interior -------------------------------------------

def bianchi_wedge_matrix(bd: Bidegree, xi) -> np.ndarray:
    """Projected wedge psi -> P(xi ^ psi) for psi Bianchi, by the closed formula.

    For k < m this is xi^psi - G(xi_V ^ psi) / alpha(m, k); for k >= m the
    wedge already preserves the Bianchi subspace.
    """
    E = wedge_matrix(bd, xi, "form")
    if bd.k >= bd.m or bd.m == bd.d:
        return E
    EV = wedge_matrix(bd, xi, "vector")
    G = bianchi_matrix(bd.shift(0, 1), "G")
    return E - G @ EV / alpha(bd.m, bd.k)


def bianchi_interior_matrix(bd: Bidegree, xi, metric: Metric) -> np.ndarray:
    """Projected contraction psi -> P(i_{xi#} psi) for psi Bianchi, closed formula."""
    X = metric.sharp(xi)
    I = interior_matrix(bd, X, "form")
    if bd.k <= bd.m or bd.m == 0:
        return I
    IV = interior_matrix(bd, X, "vector")
    GV = bianchi_matrix(bd.shift(0, -1), "GV")
    return I - GV @ IV / alpha(bd.k, bd.m)


# boundary traces -------------------------------------------------------------

TRACE_KINDS = ("tt", "nt", "tn", "nn")


def adapted_coframe(metric: Metric, normal) -> np.ndarray:
    """Orthonormal coframe (rows) whose last element is the unit ``normal``.

    The first d-1 covectors span the annihilator of the normal vector, so
    their dual vectors are tangent to the level set of the normal covector.
    """
    n = np.asarray(normal, dtype=float)
    nrm = metric.norm(n)
    if nrm == 0:
        raise ValueError("normal covector vanishes")
    rows = [n / nrm]
    for e in np.eye(metric.d):
        v = e - sum((r @ metric.ginv @ e) * r for r in rows)
        if metric.norm(v) > 1e-8:
            rows.append(v / metric.norm(v))
        if len(rows) == metric.d:
            break
    return np.array(rows[1:] + rows[:1])


def frame_change(bd: Bidegree, frame: np.ndarray) -> np.ndarray:
    """Coordinate coefficients to coefficients in the coframe dual to ``frame``.

    ``frame[:, i]`` is the i-th frame vector in coordinates.
    """
    return np.kron(compound(frame, bd.k).T, compound(frame, bd.m).T)


def boundary_bidegree(bd: Bidegree, kind: str) -> Bidegree | None:
    """Bidegree of a trace on the (d-1)-dimensional boundary; None if it is zero."""
    k = bd.k - (kind[0] == "n")
    m = bd.m - (kind[1] == "n")
    if k < 0 or m < 0:
        raise ValueError(f"trace {kind} is undefined on bidegree {bd}")
    if bd.d < 2 or k > bd.d - 1 or m > bd.d - 1:
        return None
    return Bidegree(k, m, bd.d - 1)


def _tangential_selection(bd: Bidegree) -> np.ndarray:
    """Rows picking the components without the last (normal) index."""
    sub = Bidegree(bd.k, bd.m, bd.d - 1)
    pos = {pair: n for n, pair in enumerate(basis_enumerate(bd))}
    S = np.zeros((sub.dim, bd.dim))
    for r, pair in enumerate(basis_enumerate(sub)):
        S[r, pos[pair]] = 1.0
    return S


def boundary_trace_matrix(bd: Bidegree, kind: str, metric: Metric, normal) -> np.ndarray:
    """Pointwise boundary trace j^* after contracting with the unit normal.

    ``kind`` is one of ``tt`` (j^* psi), ``nt`` (j^* i_n psi), ``tn``
    (j^* i^V_n psi) and ``nn`` (j^* i^V_n i_n psi).  The result acts on
    coordinate coefficients and returns orthonormal coefficients of a double
    form on the (d-1)-dimensional boundary, in the adapted frame of
    :func:`adapted_coframe`.
    """
    if kind not in TRACE_KINDS:
        raise ValueError(f"unknown trace kind {kind!r}")
    if boundary_bidegree(bd, kind) is None:
        return np.zeros((0, bd.dim))
    d = bd.d
    frame = np.linalg.inv(adapted_coframe(metric, normal))
    M = frame_change(bd, frame)
    cur = bd
    e_n = np.eye(d)[d - 1]
    if kind[0] == "n":
        M = interior_matrix(cur, e_n, "form") @ M
        cur = cur.shift(-1, 0)
    if kind[1] == "n":
        M = interior_matrix(cur, e_n, "vector") @ M
        cur = cur.shift(0, -1)
    return _tangential_selection(cur) @ M


# double forms ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DoubleForm:
    bidegree: Bidegree
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs))
        if c.shape != (self.bidegree.dim,):
            raise ValueError(f"expected {self.bidegree.dim} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, bd: Bidegree, dtype=float) -> "DoubleForm":
        return cls(bd, np.zeros(bd.dim, dtype=dtype))

    @classmethod
    def basis(cls, bd: Bidegree, I: tuple, J: tuple) -> "DoubleForm":
        c = np.zeros(bd.dim)
        c[_position(bd.d, bd.k)[tuple(I)] * ncomb(bd.d, bd.m) + _position(bd.d, bd.m)[tuple(J)]] = 1
        return cls(bd, c)

    @classmethod
    def covector(cls, xi) -> "DoubleForm":
        xi = np.asarray(xi)
        return cls(Bidegree(1, 0, len(xi)), xi.copy())

    @classmethod
    def random(cls, bd: Bidegree, rng, complex_=False) -> "DoubleForm":
        c = rng.standard_normal(bd.dim)
        if complex_:
            c = c + 1j * rng.standard_normal(bd.dim)
        return cls(bd, c)

    def _like(self, other):
        if not isinstance(other, DoubleForm) or other.bidegree != self.bidegree:
            raise ValueError("bidegree mismatch")
        return other.coeffs

    def __add__(self, other):
        return DoubleForm(self.bidegree, self.coeffs + self._like(other))

    def __sub__(self, other):
        return DoubleForm(self.bidegree, self.coeffs - self._like(other))

    def __mul__(self, s):
        return DoubleForm(self.bidegree, s * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return DoubleForm(self.bidegree, -self.coeffs)

    def allclose(self, other, atol=1e-12) -> bool:
        return other.bidegree == self.bidegree and np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=0)

    def __repr__(self):
        return f"DoubleForm{self.bidegree}({self.coeffs})"


def wedge(psi: DoubleForm, eta: DoubleForm) -> DoubleForm:
    """Graded wedge: (a (x) b) ^ (c (x) e) = (a ^ c) (x) (b ^ e)."""
    a, b = psi.bidegree, eta.bidegree
    if a.d != b.d:
        raise ValueError("wedge of forms over different dimensions")
    d = a.d
    if a.k + b.k > d or a.m + b.m > d:
        raise ValueError(f"degree overflow in wedge {a} ^ {b}")
    out_bd = Bidegree(a.k + b.k, a.m + b.m, d)
    dtype = np.result_type(psi.coeffs, eta.coeffs)
    out = np.zeros(out_bd.dim, dtype=dtype)
    nm = ncomb(d, out_bd.m)
    pos_k, pos_m = _position(d, out_bd.k), _position(d, out_bd.m)
    pairs_a, pairs_b = basis_enumerate(a), basis_enumerate(b)
    for i, (I, J) in enumerate(pairs_a):
        if psi.coeffs[i] == 0:
            continue
        for j, (K, L) in enumerate(pairs_b):
            if eta.coeffs[j] == 0:
                continue
            f = _merge(I, K)
            v = _merge(J, L)
            if f is None or v is None:
                continue
            out[pos_k[f[1]] * nm + pos_m[v[1]]] += f[0] * v[0] * psi.coeffs[i] * eta.coeffs[j]
    return DoubleForm(out_bd, out)


def involution(psi: DoubleForm) -> DoubleForm:
    bd = psi.bidegree
    return DoubleForm(bd.T, involution_matrix(bd) @ psi.coeffs)


def interior_product(psi: DoubleForm, X, slot: str = "form") -> DoubleForm:
    bd = psi.bidegree
    M = interior_matrix(bd, X, slot)
    tgt = bd.shift(-1, 0) if slot == "form" else bd.shift(0, -1)
    return DoubleForm(tgt, M @ psi.coeffs)


def bianchi_sum(psi: DoubleForm, variant: str = "G") -> DoubleForm:
    bd = psi.bidegree
    tgt = bianchi_target(bd, variant)
    if (variant == "G" and bd.m == 0) or (variant == "GV" and bd.k == 0):
        raise ValueError(f"Bianchi sum {variant} underflows on {bd}")
    if tgt is None:
        raise ValueError(f"Bianchi sum {variant} overflows on {bd}")
    return DoubleForm(tgt, bianchi_matrix(bd, variant) @ psi.coeffs)


def metric_op(psi: DoubleForm, which: str, metric: Metric) -> DoubleForm:
    """Apply tr_g ("trace"), g^ ("gwedge"), star ("star") or star^V ("starV")."""
    bd = psi.bidegree
    if which == "trace":
        return DoubleForm(bd.shift(-1, -1), metric.trace_matrix(bd) @ psi.coeffs)
    if which == "gwedge":
        return DoubleForm(bd.shift(1, 1), metric.gwedge_matrix(bd) @ psi.coeffs)
    if which == "star":
        return DoubleForm(Bidegree(bd.d - bd.k, bd.m, bd.d), metric.star_matrix(bd) @ psi.coeffs)
    if which == "starV":
        return DoubleForm(Bidegree(bd.k, bd.d - bd.m, bd.d),
                          metric.star_matrix(bd, "vector") @ psi.coeffs)
    raise ValueError(f"unknown metric operation {which!r}")


def project_bianchi(psi: DoubleForm, metric: Metric | None = None) -> DoubleForm:
    """Orthogonal projection onto the Bianchi subspace in the fiber metric."""
    metric = metric or Metric.euclidean(psi.bidegree.d)
    return DoubleForm(psi.bidegree, metric.bianchi_projector(psi.bidegree) @ psi.coeffs)


# identity suite ---------------------------------------------------------------

def _zero(rows, cols):
    return np.zeros((rows, cols))


def _dim(d, k, m):
    return ncomb(d, k) * ncomb(d, m)


def _opG(d, k, m):
    if _dim(d, k, m) == 0 or m == 0:
        return _zero(_dim(d, k + 1, m - 1), _dim(d, k, m))
    return bianchi_matrix(Bidegree(k, m, d), "G")


def _opGV(d, k, m):
    if _dim(d, k, m) == 0 or k == 0:
        return _zero(_dim(d, k - 1, m + 1), _dim(d, k, m))
    return bianchi_matrix(Bidegree(k, m, d), "GV")


def _opI(d, k, m, X, slot):
    dk, dm = (-1, 0) if slot == "form" else (0, -1)
    if _dim(d, k, m) == 0 or (k if slot == "form" else m) == 0:
        return _zero(_dim(d, k + dk, m + dm), _dim(d, k, m))
    return interior_matrix(Bidegree(k, m, d), X, slot)


def _opGW(d, k, m, metric):
    if _dim(d, k, m) == 0 or k == d or m == d:
        return _zero(_dim(d, k + 1, m + 1), _dim(d, k, m))
    return metric.gwedge_matrix(Bidegree(k, m, d))


def _opTR(d, k, m, metric):
    if _dim(d, k, m) == 0 or k == 0 or m == 0:
        return _zero(_dim(d, k - 1, m - 1), _dim(d, k, m))
    return metric.trace_matrix(Bidegree(k, m, d))


def random_metric(d: int, rng, spread: float = 0.3) -> Metric:
    """A well-conditioned random SPD metric."""
    A = rng.standard_normal((d, d))
    return Metric(np.eye(d) + spread * (A @ A.T) / d)


def relation_suite(d: int, samples: int = 100, seed: int = 0, metric: Metric | None = None,
                   tol: float = 1e-12, complex_=False) -> list:
    """Check the graded (anti)commutation relations on random forms.

    Returns one record per (relation, k, m) with the maximum absolute error over
    ``samples`` random coefficient vectors and a random tangent vector X.
    """
    rng = np.random.default_rng(seed)
    metric = metric or random_metric(d, rng)
    records = []

    def record(name, k, m, err):
        records.append({"relation": name, "d": d, "k": k, "m": m,
                        "max_error": float(err), "pass": bool(err <= tol)})

    for k in range(d + 1):
        for m in range(d + 1):
            n = _dim(d, k, m)
            psi = rng.standard_normal((n, samples))
            if complex_:
                psi = psi + 1j * rng.standard_normal((n, samples))
            X = rng.standard_normal(d)

            def err(A):
                return np.abs(A @ psi).max() if A.size else 0.0

            G, GV = _opG(d, k, m), _opGV(d, k, m)
            comm = _opG(d, k - 1, m + 1) @ GV - _opGV(d, k + 1, m - 1) @ G
            record("[G,G_V]=(k-m)Id", k, m, err(comm - (k - m) * np.eye(n)))
            GW, TR = _opGW(d, k, m, metric), _opTR(d, k, m, metric)
            record("[G,g^]=0", k, m, err(_opG(d, k + 1, m + 1) @ GW - _opGW(d, k + 1, m - 1, metric) @ G))
            record("[G_V,g^]=0", k, m, err(_opGV(d, k + 1, m + 1) @ GW - _opGW(d, k - 1, m + 1, metric) @ GV))
            record("[G,tr]=0", k, m, err(_opG(d, k - 1, m - 1) @ TR - _opTR(d, k + 1, m - 1, metric) @ G))
            record("[G_V,tr]=0", k, m, err(_opGV(d, k - 1, m - 1) @ TR - _opTR(d, k - 1, m + 1, metric) @ GV))
            iX, iXV = _opI(d, k, m, X, "form"), _opI(d, k, m, X, "vector")
            record("{G,i_X}=i^V_X", k, m,
                   err(_opG(d, k - 1, m) @ iX + _opI(d, k + 1, m - 1, X, "form") @ G - iXV))
            record("{G,i^V_X}=0", k, m,
                   err(_opG(d, k, m - 1) @ iXV + _opI(d, k + 1, m - 1, X, "vector") @ G))
            record("{G_V,i^V_X}=i_X", k, m,
                   err(_opGV(d, k, m - 1) @ iXV + _opI(d, k - 1, m + 1, X, "vector") @ GV - iX))
            record("{G_V,i_X}=0", k, m,
                   err(_opGV(d, k - 1, m) @ iX + _opI(d, k - 1, m + 1, X, "form") @ GV))
            if n and _dim(d, k + 1, m - 1):
                bd, tgt = Bidegree(k, m, d), Bidegree(k + 1, m - 1, d)
                eta = rng.standard_normal((tgt.dim, samples))
                lhs = np.einsum("is,ij,js->s", (G @ psi).conj(), metric.gram(tgt), eta)
                rhs = np.einsum("is,ij,js->s", psi.conj(), metric.gram(bd), _opGV(d, k + 1, m - 1) @ eta)
                record("(G psi,eta)=(psi,G_V eta)", k, m, np.abs(lhs - rhs).max())
    return records


def product_rule_suite(d: int, samples: int = 20, seed: int = 0, tol: float = 1e-12) -> list:
    """G(psi ^ eta) = G psi ^ eta + (-1)^(k+m) psi ^ G eta on random pairs."""
    rng = np.random.default_rng(seed)
    records = []
    for k in range(d + 1):
        for m in range(d + 1):
            for l in range(d + 1 - k):
                for n in range(d + 1 - m):
                    if m + n == 0:
                        continue
                    a, b = Bidegree(k, m, d), Bidegree(l, n, d)
                    worst = 0.0
                    for _ in range(samples):
                        psi, eta = DoubleForm.random(a, rng), DoubleForm.random(b, rng)
                        lhs = _opG(d, k + l, m + n) @ wedge(psi, eta).coeffs
                        rhs = np.zeros_like(lhs)
                        if m:
                            rhs += wedge(bianchi_sum(psi), eta).coeffs \
                                if k + 1 + l <= d else 0.0
                        if n and k + l + 1 <= d:
                            rhs += (-1) ** (k + m) * wedge(psi, bianchi_sum(eta)).coeffs
                        worst = max(worst, np.abs(lhs - rhs).max() if lhs.size else 0.0)
                    records.append({"relation": "product rule", "d": d, "k": k, "m": m,
                                    "l": l, "n": n, "max_error": float(worst),
                                    "pass": bool(worst <= tol)})
    return records
