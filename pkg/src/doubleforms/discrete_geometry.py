"""Structured-grid discretisation of double-form operators.

Fields live on the nodes of a tensor grid and store coordinate coefficients
per node, node-major (``index = node * fiber + component``).  Every operator is
a sparse matrix built from one-dimensional difference stencils and per-node
fiber matrices taken from :mod:`doubleforms.fiber_algebra`:

    nabla_i = D_i (x) I + blockdiag(C_i)      (C_i from the Christoffel symbols)
    d       = sum_i eps_i nabla_i,     delta = -sum_ij g^ij iota_j nabla_i

Boundary operators read boundary nodes and return orthonormal coefficients of
boundary double forms in a frame adapted to the outward unit normal.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sps

from .fiber_algebra import (
    Bidegree,
    Metric,
    adapted_coframe,
    bianchi_basis,
    boundary_trace_matrix,
    exterior_tables,
    involution_matrix,
    multi_indices,
    ncomb,
    null_basis,
)

CHARTS = ("box", "annulus")
METRICS = ("flat", "polar", "diagonal", "conformal")


# closed-form expressions -----------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
          "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh, "pi": np.pi}
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
            ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def eval_expression(expr: str, coords: np.ndarray) -> np.ndarray:
    """Evaluate a closed-form expression in x1..x3 (or x, y, z) at the nodes."""
    tree = ast.parse(str(expr), mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ValueError(f"disallowed syntax in expression {expr!r}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in (
                "x1", "x2", "x3", "x", "y", "z"):
            raise ValueError(f"unknown name {node.id!r} in expression {expr!r}")
    names = dict(_FUNCS)
    for i in range(coords.shape[1]):
        names[f"x{i + 1}"] = coords[:, i]
        names["xyz"[i]] = coords[:, i]
    val = eval(compile(tree, "<expr>", "eval"), {"__builtins__": {}}, names)
    return np.broadcast_to(np.asarray(val, dtype=float), coords.shape[:1]).copy()


# domain ---------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """Grid chart and metric.

    ``chart`` is ``box`` ([0,1]^d) or ``annulus`` (coordinates (r, theta),
    r in [1, 2], theta periodic).  ``metric`` is ``flat``, ``polar``,
    ``diagonal`` (entries from ``diag`` expressions) or ``conformal``
    (exp(2 phi) delta, phi from ``phi``).  ``connection`` optionally gives a
    bundle connection, one entry per coordinate: either an expression a_i
    (connection a_i J on a rank-2 bundle, J the rotation generator) or a
    square matrix of expressions (the matrix A_i itself).
    """
    chart: str = "box"
    n: int = 16
    d: int = 2
    metric: str = "flat"
    diag: tuple = ()
    phi: str = "0"
    n_theta: int | None = None
    boundary_order: int = 2
    connection: tuple | None = None

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise ValueError(f"unknown chart {self.chart!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.n < 8:
            raise ValueError("resolution must be at least 8 nodes per axis")
        if self.chart == "box" and self.d not in (2, 3):
            raise ValueError("box chart supports d = 2, 3")
        if self.chart == "annulus" and self.d != 2:
            raise ValueError("annulus chart is two-dimensional")
        if self.boundary_order not in (1, 2):
            raise ValueError("boundary_order must be 1 or 2")
        if self.metric == "diagonal" and len(self.diag) != self.d:
            raise ValueError("diagonal metric needs one expression per axis")
        if self.connection is not None:
            if len(self.connection) != self.d:
                raise ValueError("connection needs one entry per coordinate")
            ranks = {2 if isinstance(c, str) else len(c) for c in self.connection}
            if len(ranks) != 1:
                raise ValueError("connection entries disagree on the bundle rank")

    @property
    def bundle_rank(self) -> int:
        if self.connection is None:
            return 1
        c = self.connection[0]
        return 2 if isinstance(c, str) else len(c)

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSpec":
        data = dict(data)
        if data.get("diag") is not None:
            data["diag"] = tuple(str(v) for v in data["diag"])
        if data.get("connection") is not None:
            data["connection"] = tuple(
                str(c) if isinstance(c, (str, int, float)) else tuple(tuple(str(v) for v in row) for row in c)
                for c in data["connection"])
        if data.get("phi_expression") is not None:
            data["phi"] = data.pop("phi_expression")
        return cls(**data)

    def with_n(self, n: int) -> "DomainSpec":
        return DomainSpec(**{**self.__dict__, "n": n})


def stencil_1d(n: int, h: float, periodic: bool, boundary_order: int = 1) -> sps.csr_matrix:
    """Central first-derivative stencil, one-sided at non-periodic ends."""
    D = sps.lil_matrix((n, n))
    for j in range(n):
        if periodic:
            D[j, (j + 1) % n] += 0.5 / h
            D[j, (j - 1) % n] -= 0.5 / h
        elif 0 < j < n - 1:
            D[j, j + 1] = 0.5 / h
            D[j, j - 1] = -0.5 / h
    if not periodic:
        if boundary_order == 1:
            D[0, 0], D[0, 1] = -1 / h, 1 / h
            D[n - 1, n - 1], D[n - 1, n - 2] = 1 / h, -1 / h
        else:
            D[0, 0], D[0, 1], D[0, 2] = -1.5 / h, 2 / h, -0.5 / h
            D[n - 1, n - 1], D[n - 1, n - 2], D[n - 1, n - 3] = 1.5 / h, -2 / h, 0.5 / h
    return D.tocsr()


def second_stencil_1d(n: int, h: float, periodic: bool) -> sps.csr_matrix:
    """Second-derivative stencil, second order at non-periodic ends as well."""
    D = sps.lil_matrix((n, n))
    for j in range(n):
        if periodic or 0 < j < n - 1:
            D[j, (j - 1) % n] += 1 / h**2
            D[j, j] += -2 / h**2
            D[j, (j + 1) % n] += 1 / h**2
    if not periodic:
        for j, s in ((0, 1), (n - 1, -1)):
            for q, c in enumerate((2.0, -5.0, 4.0, -1.0)):
                D[j, j + s * q] = c / h**2
    return D.tocsr()


def trapezoid_weights(n: int, h: float, periodic: bool) -> np.ndarray:
    w = np.full(n, h)
    if not periodic:
        w[0] = w[-1] = h / 2
    return w


def _kron_axis(mats: list, axis: int, D) -> sps.csr_matrix:
    out = None
    for i, M in enumerate(mats):
        A = D if i == axis else M
        out = A if out is None else sps.kron(out, A, format="csr")
    return out


def block_diag(blocks: np.ndarray) -> sps.csr_matrix:
    """Sparse block-diagonal matrix from a stack of equal blocks (N, a, b)."""
    N, a, b = blocks.shape
    if a == 0 or b == 0:
        return sps.csr_matrix((N * a, N * b))
    return sps.bsr_matrix((blocks, np.arange(N), np.arange(N + 1)), shape=(N * a, N * b)).tocsr()


def compound_batch(A: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrices of a stack (N, d, d)."""
    N, d, _ = A.shape
    idx = multi_indices(d, k)
    if k == 0:
        return np.ones((N, 1, 1))
    C = np.empty((N, len(idx), len(idx)))
    for r, I in enumerate(idx):
        for c, J in enumerate(idx):
            C[:, r, c] = np.linalg.det(A[:, I][:, :, J]) if k > 1 else A[:, I[0], J[0]]
    return C


@dataclass
class BoundaryPoint:
    node: int
    normal: np.ndarray       # outward conormal in coordinates (not normalised)
    face: int
    weight: float            # trapezoid weight times induced length/area element
    position: int            # index along the face (d = 2)


class Domain:
    """Built grid: nodes, metric, Christoffel symbols, curvature, boundary."""

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        d, n = spec.d, spec.n
        self.d = d
        if spec.chart == "box":
            self.shape = (n,) * d
            self.periodic = (False,) * d
            axes = [np.linspace(0.0, 1.0, n) for _ in range(d)]
        else:
            nt = spec.n_theta or 2 * n + 1
            self.shape = (n, nt)
            self.periodic = (False, True)
            axes = [np.linspace(1.0, 2.0, n), np.arange(nt) * (2 * np.pi / nt)]
        self.h = [ax[1] - ax[0] for ax in axes]
        grids = np.meshgrid(*axes, indexing="ij")
        self.coords = np.stack([g.reshape(-1) for g in grids], axis=1)
        self.N = self.coords.shape[0]
        eyes = [sps.identity(s, format="csr") for s in self.shape]
        self.partials = [
            _kron_axis(eyes, i, stencil_1d(self.shape[i], self.h[i], self.periodic[i],
                                           spec.boundary_order)) for i in range(d)]
        self._geo_partials = [
            _kron_axis(eyes, i, stencil_1d(self.shape[i], self.h[i], self.periodic[i], 2))
            for i in range(d)]
        w = None
        for i in range(d):
            wi = trapezoid_weights(self.shape[i], self.h[i], self.periodic[i])
            w = wi if w is None else np.multiply.outer(w, wi)
        self.quad = np.asarray(w).reshape(-1)
        self.g = self._metric_field()
        eig = np.linalg.eigvalsh(self.g)
        bad = np.nonzero(eig[:, 0] <= 0)[0]
        if len(bad):
            raise ValueError(f"metric is not positive definite at node {bad[0]} "
                             f"(x = {self.coords[bad[0]].tolist()})")
        self.ginv = np.linalg.inv(self.g)
        self.sqrt_det = np.sqrt(np.linalg.det(self.g))
        self.constant_metric = bool(np.allclose(self.g, self.g[0], atol=0, rtol=0))
        self.christoffel = self._christoffel()
        self.boundary = self._boundary_points()

    # geometry
    def _metric_field(self) -> np.ndarray:
        spec, X, d = self.spec, self.coords, self.d
        g = np.zeros((self.N, d, d))
        if spec.metric == "flat":
            if spec.chart == "annulus":
                raise ValueError("the annulus chart needs the polar (or a curved) metric")
            g[:] = np.eye(d)
        elif spec.metric == "polar":
            if spec.chart != "annulus":
                raise ValueError("polar metric needs the annulus chart")
            g[:, 0, 0] = 1.0
            g[:, 1, 1] = X[:, 0] ** 2
        elif spec.metric == "diagonal":
            for i, e in enumerate(spec.diag):
                g[:, i, i] = eval_expression(e, X)
        else:
            phi = eval_expression(spec.phi, X)
            base = np.eye(d) if spec.chart == "box" else np.diag([1.0, 0.0])
            g[:] = base
            if spec.chart == "annulus":
                g[:, 1, 1] = X[:, 0] ** 2
            g *= np.exp(2 * phi)[:, None, None]
        return g

    def diff(self, values: np.ndarray, axis: int, geometric: bool = True) -> np.ndarray:
        """Nodal derivative of an (N, ...) array along a coordinate axis."""
        D = self._geo_partials[axis] if geometric else self.partials[axis]
        flat = values.reshape(self.N, -1)
        return (D @ flat).reshape(values.shape)

    def _christoffel(self) -> np.ndarray:
        """Gamma[n, l, i, j] = Gamma^l_ij, symmetric in (i, j)."""
        if self.constant_metric:
            return np.zeros((self.N, self.d, self.d, self.d))
        dg = np.stack([self.diff(self.g, a) for a in range(self.d)], axis=1)  # [n, a, i, j] = d_a g_ij
        # lower[n, p, i, j] = 1/2 (d_i g_jp + d_j g_ip - d_p g_ij)
        lower = 0.5 * (np.einsum("nijp->npij", dg) + np.einsum("njip->npij", dg) - dg)
        G = np.einsum("nlp,npij->nlij", self.ginv, lower)
        return 0.5 * (G + np.transpose(G, (0, 1, 3, 2)))

    def _second(self, values: np.ndarray, a: int, b: int) -> np.ndarray:
        """Second derivative d_a d_b, second order up to the boundary."""
        if a != b:
            return self.diff(self.diff(values, b), a)
        flat = values.reshape(self.N, -1)
        return (self._geo_second[a] @ flat).reshape(values.shape)

    @cached_property
    def _geo_second(self) -> list:
        eyes = [sps.identity(s, format="csr") for s in self.shape]
        return [_kron_axis(eyes, i, second_stencil_1d(self.shape[i], self.h[i], self.periodic[i]))
                for i in range(self.d)]

    @cached_property
    def riemann(self) -> np.ndarray:
        """R[n, l, k, i, j] = R^l_kij = d_i G^l_jk - d_j G^l_ik + G^l_ip G^p_jk - G^l_jp G^p_ik."""
        d, G = self.d, self.christoffel
        if self.constant_metric:
            return np.zeros((self.N, d, d, d, d))
        dg = np.stack([self.diff(self.g, a) for a in range(d)], axis=1)
        ddg = np.zeros((self.N, d, d, d, d))  # [n, a, b, i, j] = d_a d_b g_ij
        for a in range(d):
            for b in range(a, d):
                ddg[:, a, b] = ddg[:, b, a] = self._second(self.g, a, b)
        lower = 0.5 * (np.einsum("nijp->npij", dg) + np.einsum("njip->npij", dg) - dg)
        # d_a lower[p, i, j] = 1/2 (d_a d_i g_jp + d_a d_j g_ip - d_a d_p g_ij)
        dlower = 0.5 * (np.einsum("naijp->napij", ddg) + np.einsum("najip->napij", ddg) - ddg)
        dginv = -np.einsum("nlq,naqr,nrp->nalp", self.ginv, dg, self.ginv)
        dG = (np.einsum("nalp,npij->nalij", dginv, lower)
              + np.einsum("nlp,napij->nalij", self.ginv, dlower))  # [n, a, l, i, j]
        return (np.einsum("niljk->nlkij", dG)
                - np.einsum("njlik->nlkij", dG)
                + np.einsum("nlip,npjk->nlkij", G, G)
                - np.einsum("nljp,npik->nlkij", G, G))

    @cached_property
    def gauss_curvature(self) -> np.ndarray:
        """Sectional curvature of the coordinate plane (x1, x2)."""
        R = self.riemann
        R_low = np.einsum("nml,nlkij->nmkij", self.g, R)
        det = self.g[:, 0, 0] * self.g[:, 1, 1] - self.g[:, 0, 1] ** 2
        return R_low[:, 0, 1, 0, 1] / det

    def metric_at(self, node: int) -> Metric:
        return Metric(self.g[node])

    # boundary
    def _boundary_points(self) -> list:
        pts = []
        idx = np.arange(self.N).reshape(self.shape)
        face = 0
        for axis in range(self.d):
            if self.periodic[axis]:
                continue
            for side, sign in ((0, -1.0), (self.shape[axis] - 1, 1.0)):
                nodes = np.take(idx, side, axis=axis)
                others = [a for a in range(self.d) if a != axis]
                w = None
                for a in others:
                    wa = trapezoid_weights(self.shape[a], self.h[a], self.periodic[a])
                    w = wa if w is None else np.multiply.outer(w, wa)
                w = np.asarray(w).reshape(-1)
                for pos, (node, wq) in enumerate(zip(nodes.reshape(-1), w)):
                    gs = self.g[node][np.ix_(others, others)]
                    normal = np.zeros(self.d)
                    normal[axis] = sign
                    pts.append(BoundaryPoint(int(node), normal, face, float(wq * np.sqrt(np.linalg.det(gs))), pos))
                face += 1
        return pts

    @cached_property
    def faces(self) -> list:
        """Per face, the boundary-point indices in order along the face."""
        out = {}
        for p, b in enumerate(self.boundary):
            out.setdefault(b.face, []).append(p)
        return [out[f] for f in sorted(out)]

    def face_axis(self, face: int) -> tuple:
        """(normal axis, tangential axis) of a face of a two-dimensional chart."""
        axes = [a for a in range(self.d) if not self.periodic[a]]
        normal_axis = axes[face // 2]
        tangent = [a for a in range(self.d) if a != normal_axis]
        return normal_axis, tangent[0]

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        return np.array([b.weight for b in self.boundary])


def build_domain(spec: DomainSpec) -> Domain:
    return Domain(spec)


# field spaces -----------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpace:
    """Fiber of a grid field: a bidegree, a subspace kind, and a bundle rank."""
    bidegree: Bidegree
    kind: str = "full"          # full | bianchi | symmetric
    rank: int = 1               # rank of the twisting bundle (1 = untwisted)

    @property
    def basis(self) -> np.ndarray:
        bd = self.bidegree
        if self.kind == "full":
            Q = np.eye(bd.dim)
        elif self.kind == "bianchi":
            Q = np.array(bianchi_basis(bd))
        elif self.kind == "symmetric":
            Q = null_basis(involution_matrix(bd) - np.eye(bd.dim))
        else:
            raise ValueError(f"unknown field kind {self.kind!r}")
        return np.kron(Q, np.eye(self.rank)) if self.rank > 1 else Q

    @property
    def fiber(self) -> int:
        return self.basis.shape[1]

    @property
    def full_fiber(self) -> int:
        return self.bidegree.dim * self.rank

    def __str__(self):
        s = f"{self.kind}{self.bidegree}"
        return s + (f"x{self.rank}" if self.rank > 1 else "")


@dataclass(frozen=True)
class BoundarySpace:
    """Concatenation of boundary parts, each one fiber per boundary point."""
    parts: tuple                # ((name, fiber_dim), ...)
    npoints: int

    @property
    def size(self) -> int:
        return sum(f for _, f in self.parts) * self.npoints

    def __str__(self):
        return "boundary[" + ", ".join(f"{n}:{f}" for n, f in self.parts) + f"]x{self.npoints}"


@dataclass
class DiscreteOperator:
    name: str
    matrix: sps.csr_matrix
    source: FieldSpace
    target: object              # FieldSpace or BoundarySpace
    order: int

    def __post_init__(self):
        rows = self.target.size if isinstance(self.target, BoundarySpace) else None
        if rows is not None and self.matrix.shape[0] != rows:
            raise ValueError("matrix rows do not match the boundary space")

    def __matmul__(self, x):
        return self.matrix @ x


# per-node fiber data ----------------------------------------------------------

def _tables(bd: Bidegree):
    """Form-slot and vector-slot eps/iota tables on the full (k, m) fiber."""
    d = bd.d
    Ik, Im = np.eye(ncomb(d, bd.k)), np.eye(ncomb(d, bd.m))
    eK, iK = exterior_tables(d, bd.k)
    eM, iM = exterior_tables(d, bd.m)
    return Ik, Im, eK, iK, eM, iM


def _eps(bd: Bidegree, a: int, slot: str) -> np.ndarray:
    Ik, Im, eK, _, eM, _ = _tables(bd)
    return np.kron(eK[a], Im) if slot == "form" else np.kron(Ik, eM[a])


def _iota(bd: Bidegree, a: int, slot: str) -> np.ndarray:
    Ik, Im, _, iK, _, iM = _tables(bd)
    return np.kron(iK[a], Im) if slot == "form" else np.kron(Ik, iM[a])


class Discretization:
    """Operator assembly on a built domain."""

    def __init__(self, domain: Domain):
        self.domain = domain
        self._cache = {}

    @property
    def N(self) -> int:
        return self.domain.N

    # fiber data
    def gram(self, bd: Bidegree) -> np.ndarray:
        key = ("gram", bd)
        if key not in self._cache:
            gi = self.domain.ginv
            self._cache[key] = np.einsum("nab,ncd->nacbd", compound_batch(gi, bd.k),
                                         compound_batch(gi, bd.m)).reshape(self.N, bd.dim, bd.dim)
        return self._cache[key]

    def space_gram(self, space: FieldSpace) -> np.ndarray:
        G = self.gram(space.bidegree)
        if space.rank > 1:
            G = np.einsum("nab,uv->naubv", G, np.eye(space.rank)).reshape(
                self.N, space.full_fiber, space.full_fiber)
        Q = space.basis
        return np.einsum("ai,nab,bj->nij", Q, G, Q)

    def restrict(self, space: FieldSpace) -> np.ndarray:
        """Per-node fiber-orthogonal projection onto the space, in its coordinates."""
        key = ("R", space)
        if key not in self._cache:
            Q = space.basis
            if space.kind == "full":
                R = np.broadcast_to(Q.T, (self.N,) + Q.T.shape)
            else:
                G = self.gram(space.bidegree)
                if space.rank > 1:
                    G = np.einsum("nab,uv->naubv", G, np.eye(space.rank)).reshape(
                        self.N, space.full_fiber, space.full_fiber)
                QG = np.einsum("ai,nab->nib", Q, G)
                R = np.linalg.solve(np.einsum("nib,bj->nij", QG, Q), QG)
            self._cache[key] = np.ascontiguousarray(R)
        return self._cache[key]

    def embed(self, space: FieldSpace) -> sps.csr_matrix:
        return sps.kron(sps.identity(self.N), sps.csr_matrix(space.basis), format="csr")

    def project(self, space: FieldSpace) -> sps.csr_matrix:
        return block_diag(self.restrict(space))

    def mass_matrix(self, space: FieldSpace) -> sps.csr_matrix:
        w = self.domain.quad * self.domain.sqrt_det
        return block_diag(w[:, None, None] * self.space_gram(space))

    def boundary_mass(self, bspace: BoundarySpace) -> sps.csr_matrix:
        w = self.domain.boundary_weights
        return sps.block_diag([sps.kron(sps.diags(w), sps.identity(f)) for _, f in bspace.parts]
                              + [sps.csr_matrix((0, 0))], format="csr")

    # covariant derivative
    def _partial(self, i: int, F: int) -> sps.csr_matrix:
        return sps.kron(self.domain.partials[i], sps.identity(F), format="csr")

    def _connection_blocks(self, bd: Bidegree, i: int) -> np.ndarray:
        """Per-node matrices C_i of nabla_i - d_i on coordinate coefficients."""
        d = bd.d
        G = self.domain.christoffel
        C = np.zeros((self.N, bd.dim, bd.dim))
        if not np.any(G):
            return C
        for j in range(d):
            for l in range(d):
                coeff = -G[:, j, i, l]
                if not np.any(coeff):
                    continue
                X = np.zeros((bd.dim, bd.dim))
                if bd.k > 0 and bd.k <= d:
                    X = X + (_eps(bd.shift(-1, 0), l, "form") @ _iota(bd, j, "form"))
                if bd.m > 0:
                    X = X + (_eps(bd.shift(0, -1), l, "vector") @ _iota(bd, j, "vector"))
                C += coeff[:, None, None] * X
        return C

    def _bundle_blocks(self, rank: int, i: int) -> np.ndarray:
        conn = self.domain.spec.connection
        if conn is None or rank == 1:
            return np.zeros((self.N, rank, rank))
        if rank != self.domain.spec.bundle_rank:
            raise ValueError(f"field rank {rank} does not match the bundle rank")
        X = self.domain.coords
        if isinstance(conn[i], str):
            J = np.array([[0.0, -1.0], [1.0, 0.0]])
            return eval_expression(conn[i], X)[:, None, None] * J
        return np.stack([np.stack([eval_expression(e, X) for e in row], axis=-1)
                         for row in conn[i]], axis=-2)

    def nabla(self, bd: Bidegree, i: int, rank: int = 1) -> sps.csr_matrix:
        key = ("nabla", bd, i, rank)
        if key not in self._cache:
            F = bd.dim * rank
            C = self._connection_blocks(bd, i)
            if rank > 1:
                A = self._bundle_blocks(rank, i)
                C = (np.einsum("nab,uv->naubv", C, np.eye(rank))
                     + np.einsum("ab,nuv->naubv", np.eye(bd.dim), A)).reshape(self.N, F, F)
            self._cache[key] = (self._partial(i, F) + block_diag(C)).tocsr()
        return self._cache[key]

    def _fiber_const(self, M: np.ndarray, rank: int) -> sps.csr_matrix:
        if rank > 1:
            M = np.kron(M, np.eye(rank))
        return sps.kron(sps.identity(self.N), sps.csr_matrix(M), format="csr")

    def _full_operator(self, op: str, bd: Bidegree, rank: int = 1) -> tuple:
        """(matrix on full coefficients, target bidegree) for first-order ops."""
        d = bd.d
        if op in ("d", "dV"):
            slot = "form" if op == "d" else "vector"
            if not bd.valid_shift(*((1, 0) if op == "d" else (0, 1))):
                raise ValueError(f"{op} is not defined on {bd}")
            tgt = bd.shift(1, 0) if op == "d" else bd.shift(0, 1)
            A = sum(self._fiber_const(_eps(bd, i, slot), rank) @ self.nabla(bd, i, rank) for i in range(d))
            return A.tocsr(), tgt
        if op in ("delta", "deltaV"):
            slot = "form" if op == "delta" else "vector"
            deg = bd.k if slot == "form" else bd.m
            if deg == 0:
                raise ValueError(f"{op} is not defined on {bd}")
            tgt = bd.shift(-1, 0) if slot == "form" else bd.shift(0, -1)
            gi = self.domain.ginv
            iotas = np.array([_iota(bd, j, slot) for j in range(d)])
            A = None
            for i in range(d):
                K = -np.einsum("nj,jab->nab", gi[:, i, :], iotas)
                if rank > 1:
                    K = np.einsum("nab,uv->naubv", K, np.eye(rank)).reshape(
                        self.N, tgt.dim * rank, bd.dim * rank)
                term = block_diag(K) @ self.nabla(bd, i, rank)
                A = term if A is None else A + term
            return A.tocsr(), tgt
        raise ValueError(f"unknown first-order operator {op!r}")

    # assembly
    def assemble(self, op: str, space: FieldSpace) -> DiscreteOperator:
        key = ("op", op, space)
        if key in self._cache:
            return self._cache[key]
        bd, rank = space.bidegree, space.rank
        E = self.embed(space)
        if op in ("d", "dV", "delta", "deltaV", "dG", "deltaG"):
            base = {"dG": "d", "deltaG": "delta"}.get(op, op)
            A, tgt = self._full_operator(base, bd, rank)
            kind = "bianchi" if op in ("dG", "deltaG") else "full"
            tspace = FieldSpace(tgt, kind, rank)
            out = DiscreteOperator(op, (self.project(tspace) @ A @ E).tocsr(), space, tspace, 1)
        elif op in ("H", "Hstar"):
            if op == "H":
                a1, t1 = self._full_operator("dV", bd, rank)
                a2, _ = self._full_operator("d", t1, rank)
                b1, s1 = self._full_operator("d", bd, rank)
                b2, tgt = self._full_operator("dV", s1, rank)
            else:
                a1, t1 = self._full_operator("deltaV", bd, rank)
                a2, _ = self._full_operator("delta", t1, rank)
                b1, s1 = self._full_operator("delta", bd, rank)
                b2, tgt = self._full_operator("deltaV", s1, rank)
            A = 0.5 * (a2 @ a1 + b2 @ b1)
            tspace = FieldSpace(tgt, "bianchi" if space.kind != "full" else "full", rank)
            out = DiscreteOperator(op, (self.project(tspace) @ A @ E).tocsr(), space, tspace, 2)
        elif op in BOUNDARY_PARTS or op in COMPOSITE_BOUNDARY:
            out = self._boundary(op, space)
        else:
            raise ValueError(f"unsupported operator {op!r} on {space}")
        self._cache[key] = out
        return out

    # boundary
    def _trace_rows(self, bd: Bidegree, kind: str, rank: int, bianchi: bool) -> tuple:
        """Sparse trace on full coefficients and the boundary fiber dimension."""
        k = bd.k - (kind[0] == "n")
        m = bd.m - (kind[1] == "n")
        dom = self.domain
        if k < 0 or m < 0 or k > bd.d - 1 or m > bd.d - 1:
            return sps.csr_matrix((0, self.N * bd.dim * rank)), 0
        fib = ncomb(bd.d - 1, k) * ncomb(bd.d - 1, m)
        P = None
        if bianchi and kind in ("nt", "tn"):
            P = Metric.euclidean(bd.d - 1).bianchi_projector(Bidegree(k, m, bd.d - 1))
        rows, cols, vals = [], [], []
        for p, b in enumerate(dom.boundary):
            T = boundary_trace_matrix(bd, kind, Metric(dom.g[b.node]), b.normal)
            if P is not None:
                T = P @ T
            if rank > 1:
                T = np.kron(T, np.eye(rank))
            r, c = np.nonzero(np.abs(T) > 0)
            rows.append(p * fib * rank + r)
            cols.append(b.node * bd.dim * rank + c)
            vals.append(T[r, c])
        M = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(len(dom.boundary) * fib * rank, self.N * bd.dim * rank))
        return M, fib * rank

    def _boundary_derivative(self, bfib_bd: Bidegree, slot: str, which: str) -> sps.csr_matrix:
        """d or delta of the (d-1)=1 dimensional boundary, form or vector slot.

        Acts on orthonormal boundary coefficients ordered by boundary point.
        """
        dom = self.domain
        if dom.d != 2:
            raise ValueError("boundary derivatives are implemented for d = 2")
        npts = len(dom.boundary)
        Ds = sps.lil_matrix((npts, npts))
        for f, pts in enumerate(dom.faces):
            normal_axis, t_axis = dom.face_axis(f)
            L = len(pts)
            D1 = stencil_1d(L, dom.h[t_axis], dom.periodic[t_axis], dom.spec.boundary_order)
            for a, p in enumerate(pts):
                b = dom.boundary[p]
                frame = np.linalg.inv(adapted_coframe(Metric(dom.g[b.node]), b.normal))
                c = frame[t_axis, 0]  # E_1 = c d/dt
                row = D1.getrow(a)
                for q, v in zip(row.indices, row.data):
                    Ds[p, pts[q]] += c * v
        Ds = Ds.tocsr()
        if which == "d":
            M = _eps(bfib_bd, 0, slot) if bfib_bd.valid_shift(*((1, 0) if slot == "form" else (0, 1))) \
                else np.zeros((0, bfib_bd.dim))
        else:
            deg = bfib_bd.k if slot == "form" else bfib_bd.m
            M = -_iota(bfib_bd, 0, slot) if deg > 0 else np.zeros((0, bfib_bd.dim))
        return sps.kron(Ds, sps.csr_matrix(M), format="csr")

    def _connecting(self, op: str, space: FieldSpace) -> tuple:
        """Full-coefficient matrices of T and T* and the boundary fiber size."""
        bd, rank = space.bidegree, space.rank
        if rank > 1:
            raise ValueError("connecting boundary operators need an untwisted field")
        if bd.d != 2:
            raise ValueError("T and T* are implemented for d = 2")
        d, k, m = bd.d, bd.k, bd.m
        ncols = self.N * bd.dim

        def trace(b, kind):
            return self._trace_rows(b, kind, 1, False)[0]

        def bdry(kk, mm):
            return Bidegree(kk, mm, d - 1) if 0 <= kk <= d - 1 and 0 <= mm <= d - 1 else None

        if op == "T":
            tb = bdry(k, m)
            if tb is None:
                return sps.csr_matrix((0, ncols)), 0
            A = sps.csr_matrix((len(self.domain.boundary) * tb.dim, ncols))
            if bd.valid_shift(1, 0):
                dA, up = self._full_operator("d", bd)
                A = A + 0.5 * trace(up, "nt") @ dA
            if k >= 1 and bdry(k - 1, m) is not None:
                A = A - 0.5 * self._boundary_derivative(bdry(k - 1, m), "form", "d") @ trace(bd, "nt")
            if bd.valid_shift(0, 1):
                dA, up = self._full_operator("dV", bd)
                A = A + 0.5 * trace(up, "tn") @ dA
            if m >= 1 and bdry(k, m - 1) is not None:
                A = A - 0.5 * self._boundary_derivative(bdry(k, m - 1), "vector", "d") @ trace(bd, "tn")
            return A.tocsr(), tb.dim
        tb = bdry(k - 1, m - 1) if k >= 1 and m >= 1 else None
        if tb is None:
            return sps.csr_matrix((0, ncols)), 0
        A = sps.csr_matrix((len(self.domain.boundary) * tb.dim, ncols))
        dA, low = self._full_operator("delta", bd)
        A = A - 0.5 * trace(low, "tn") @ dA
        if bdry(k, m - 1) is not None:
            A = A - 0.5 * self._boundary_derivative(bdry(k, m - 1), "form", "delta") @ trace(bd, "tn")
        dA, low = self._full_operator("deltaV", bd)
        A = A - 0.5 * trace(low, "nt") @ dA
        if bdry(k - 1, m) is not None:
            A = A - 0.5 * self._boundary_derivative(bdry(k - 1, m), "vector", "delta") @ trace(bd, "nt")
        return A.tocsr(), tb.dim

    def _boundary(self, op: str, space: FieldSpace) -> DiscreteOperator:
        E = self.embed(space)
        parts = COMPOSITE_BOUNDARY.get(op, ((op, 1.0),))
        mats, descr = [], []
        order = 0
        for name, sign in parts:
            if name in ("T", "Tstar"):
                A, fib = self._connecting(name, space)
                order = 1
            else:
                kind = name[1:3]
                A, fib = self._trace_rows(space.bidegree, kind, space.rank, name.endswith("G"))
            mats.append(sign * (A @ E))
            descr.append((name, fib))
        bspace = BoundarySpace(tuple(descr), len(self.domain.boundary))
        M = sps.vstack(mats, format="csr") if mats else sps.csr_matrix((0, E.shape[1]))
        return DiscreteOperator(op, M, space, bspace, order)

    # smooth trial fields
    def smooth_field(self, space: FieldSpace, seed: int, modes: int = 3) -> np.ndarray:
        """Smooth random field (same analytic function at every resolution)."""
        rng = np.random.default_rng(seed)
        X = self.domain.coords
        if self.domain.spec.chart == "annulus":
            X = np.stack([X[:, 0] * np.cos(X[:, 1]), X[:, 0] * np.sin(X[:, 1])], axis=1)
        F = space.full_fiber
        vals = np.zeros((self.N, F))
        for c in range(F):
            for _ in range(modes):
                w = rng.uniform(-2.5, 2.5, size=X.shape[1])
                vals[:, c] += rng.normal() * np.sin(X @ w + rng.uniform(0, 2 * np.pi))
        R = self.restrict(space)
        return np.einsum("nij,nj->ni", R, vals).reshape(-1)

    def inner(self, space: FieldSpace, x: np.ndarray, y: np.ndarray) -> float:
        return float(x @ (self.mass_matrix(space) @ y))


BOUNDARY_PARTS = ("Ptt", "Pnt", "Ptn", "Pnn", "PttG", "PntG", "PtnG", "PnnG", "T", "Tstar")
COMPOSITE_BOUNDARY = {
    "Bd": (("Ptt", 1.0), ("Ptn", 1.0)),
    "Bdstar": (("Pnt", 1.0), ("Pnn", 1.0)),
    "BdV": (("Ptt", 1.0), ("Pnt", 1.0)),
    "BdVstar": (("Ptn", 1.0), ("Pnn", 1.0)),
    "BG": (("PttG", 1.0), ("PtnG", 1.0)),
    "BGstar": (("PntG", 1.0), ("PnnG", 1.0)),
    "BH": (("Ptt", 1.0), ("T", 1.0)),
    "BHstar": (("Tstar", -1.0), ("Pnn", 1.0)),
}

# operator -> (adjoint, boundary operator on the source, boundary operator on the target)
GREEN_PAIRS = {
    "d": ("delta", "Bd", "Bdstar"),
    "dV": ("deltaV", "BdV", "BdVstar"),
    "dG": ("deltaG", "BG", "BGstar"),
    "H": ("Hstar", "BH", "BHstar"),
}


def assemble(disc: Discretization, op: str, space: FieldSpace) -> DiscreteOperator:
    return disc.assemble(op, space)


def greens_residual(disc: Discretization, op: str, space: FieldSpace, trials: int = 5,
                    seed: int = 0) -> dict:
    """Defect of the discrete Green formula on smooth random fields.

    Residual = |<A psi, eta> - <psi, A* eta> - <B psi, B* eta>| divided by
    |A psi| |eta| + |psi| |A* eta| (discrete L^2 norms).
    """
    adj, b_op, bs_op = GREEN_PAIRS[op]
    A = disc.assemble(op, space)
    tspace = A.target
    As = disc.assemble(adj, tspace)
    B = disc.assemble(b_op, space)
    Bs = disc.assemble(bs_op, tspace)
    if [f for _, f in B.target.parts] != [f for _, f in Bs.target.parts]:
        raise ValueError("boundary operators do not pair")
    Ms, Mt = disc.mass_matrix(space), disc.mass_matrix(tspace)
    Mb = disc.boundary_mass(B.target)
    worst, raw = 0.0, 0.0
    for t in range(trials):
        psi = disc.smooth_field(space, seed + 2 * t)
        eta = disc.smooth_field(tspace, seed + 2 * t + 1)
        Apsi, Aseta = A.matrix @ psi, As.matrix @ eta
        lhs = Apsi @ (Mt @ eta)
        rhs = psi @ (Ms @ Aseta) + (B.matrix @ psi) @ (Mb @ (Bs.matrix @ eta))
        scale = (math.sqrt(Apsi @ Mt @ Apsi) * math.sqrt(eta @ Mt @ eta)
                 + math.sqrt(psi @ Ms @ psi) * math.sqrt(Aseta @ Ms @ Aseta))
        raw = max(raw, abs(lhs - rhs))
        worst = max(worst, abs(lhs - rhs) / scale)
    return {"op": op, "space": str(space), "n": disc.domain.spec.n, "trials": trials,
            "residual": worst, "abs_residual": raw}


def greens_convergence(spec: DomainSpec, op: str, space: FieldSpace, ns=(8, 16, 32),
                       trials: int = 5, seed: int = 0) -> dict:
    """Green residuals over a resolution sweep and the successive reduction factors."""
    rows = [greens_residual(Discretization(build_domain(spec.with_n(n))), op, space, trials, seed)
            for n in ns]
    res = [r["residual"] for r in rows]
    factors = [a / b if b > 0 else math.inf for a, b in zip(res, res[1:])]
    return {"op": op, "space": str(space), "ns": list(ns), "residuals": res, "factors": factors}


def export_matrix_market(op: DiscreteOperator, path) -> None:
    scipy.io.mmwrite(str(path), op.matrix, comment=f"{op.name}: {op.source} -> {op.target}")
