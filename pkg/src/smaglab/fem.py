"""Taylor-Hood (P2 velocity / P1 pressure) spaces and form assembly.

Velocity coefficient vectors are stored component-blocked: the first
``n_nodes`` entries are the x-component nodal values (vertices, then edge
midpoints) and the next ``n_nodes`` the z-component.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from .mesh import Marker, Mesh, unique_edges
from .quadrature import DEGREE5, TriangleRule

# vertex nodes 0-2, then the midpoints of the edges opposite vertex 0, 1, 2
_EDGE_ENDS = ((1, 2), (2, 0), (0, 1))


def p2_values(bary: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points, shape (nq, 6)."""
    l0, l1, l2 = bary.T
    return np.column_stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1]
    )


def p2_dlambda(bary: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 shape functions w.r.t. (l0, l1, l2), shape (nq, 6, 3)."""
    nq = len(bary)
    d = np.zeros((nq, 6, 3))
    for i in range(3):
        d[:, i, i] = 4 * bary[:, i] - 1
    for k, (a, b) in enumerate(_EDGE_ENDS):
        d[:, 3 + k, a] = 4 * bary[:, b]
        d[:, 3 + k, b] = 4 * bary[:, a]
    return d


class _Pattern:
    """Fixed CSR sparsity for element matrices scattered by local index pairs."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        self.shape = shape
        keys = rows.ravel().astype(np.int64) * shape[1] + cols.ravel()
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.nnz = len(uniq)
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.rows = uniq // shape[1]
        r = self.rows
        self.indptr = np.zeros(shape[0] + 1, dtype=np.int32)
        np.cumsum(np.bincount(r, minlength=shape[0]), out=self.indptr[1:])

    def data(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.inverse, weights=local.ravel(), minlength=self.nnz)

    def matrix(self, local: np.ndarray) -> sp.csr_matrix:
        return self.from_data(self.data(local))

    def from_data(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)

    def aligned(self, K: sp.spmatrix) -> bool:
        """True if CSR ``K`` stores exactly this pattern, so ``K.data`` lines up."""
        return (
            sp.isspmatrix_csr(K)
            and K.nnz == self.nnz
            and np.array_equal(K.indptr, self.indptr)
            and np.array_equal(K.indices, self.indices)
        )


class MixedSpace:
    """Taylor-Hood degrees of freedom on a mesh, with Dirichlet and periodic constraints.

    Dirichlet conditions are imposed on every marker in ``dirichlet_markers``.
    If the mesh carries PeriodicLeft/PeriodicRight markers, the right side is
    identified with the left one (matched by z).
    """

    def __init__(
        self,
        mesh: Mesh,
        dirichlet_markers: Iterable[Marker],
        rule: TriangleRule = DEGREE5,
        workers: int = 1,
    ):
        self.mesh = mesh
        self.rule = rule
        self.workers = workers
        self.dirichlet_markers = tuple(Marker(m) for m in dirichlet_markers)

        tris = mesh.triangles
        nv = mesh.n_vertices
        edges, tri_edges = unique_edges(tris)
        self.edges = edges
        self.n_nodes = nv + len(edges)
        self.n_vel = 2 * self.n_nodes
        self.n_pres = nv
        self.elem_nodes = np.hstack([tris, nv + tri_edges])
        self.nodes = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])

        self._geometry()
        self._constraints()
        self._scalar_pattern = _Pattern(
            np.repeat(self.elem_nodes[:, :, None], 6, axis=2),
            np.repeat(self.elem_nodes[:, None, :], 6, axis=1),
            (self.n_nodes, self.n_nodes),
        )

    # -- geometry -----------------------------------------------------------
    def _geometry(self):
        p = self.mesh.vertices[self.mesh.triangles]
        area = 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )
        gl = np.empty((len(p), 3, 2))
        for i in range(3):
            a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            gl[:, i, 0] = (a[:, 1] - b[:, 1]) / (2 * area)
            gl[:, i, 1] = (b[:, 0] - a[:, 0]) / (2 * area)
        self.elem_area = area
        self.grad_lambda = gl
        bary = self.rule.bary
        self.phi = p2_values(bary)  # (nq, 6)
        # physical gradients of P2 shape functions, (E, nq, 6, 2)
        self.grad_phi = np.einsum("qik,ekd->eqid", p2_dlambda(bary), gl)
        self._grad_phi_t = np.ascontiguousarray(self.grad_phi.transpose(0, 1, 3, 2))  # (E, nq, 2, 6)
        self.wA = area[:, None] * self.rule.weights[None, :]  # (E, nq)
        self.qpoints = np.einsum("qk,ekd->eqd", bary, p)

    # -- constraints --------------------------------------------------------
    def _boundary_nodes(self, markers) -> np.ndarray:
        mesh = self.mesh
        sel = np.isin(mesh.boundary_markers, [int(m) for m in markers])
        bedges = np.sort(mesh.boundary_edges[sel], axis=1)
        if len(bedges) == 0:
            return np.zeros(0, dtype=np.int64)
        idx = np.searchsorted(self.edges[:, 0] * (self.n_nodes + 1) + self.edges[:, 1],
                              bedges[:, 0] * (self.n_nodes + 1) + bedges[:, 1])
        return np.unique(np.concatenate([bedges.ravel(), mesh.n_vertices + idx]))

    def _periodic_pairs(self, candidates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        left = np.intersect1d(self._boundary_nodes([Marker.PeriodicLeft]), candidates)
        right = np.intersect1d(self._boundary_nodes([Marker.PeriodicRight]), candidates)
        if len(left) != len(right):
            raise ValueError("periodic sides carry different node counts")
        zl = self.nodes[left, 1]
        zr = self.nodes[right, 1]
        ol, orr = np.argsort(zl), np.argsort(zr)
        if len(left) and np.max(np.abs(zl[ol] - zr[orr])) > 1e-10:
            raise ValueError("periodic nodes do not match")
        return right[orr], left[ol]

    def _constraints(self):
        nn = self.n_nodes
        self.dirichlet_nodes = self._boundary_nodes(self.dirichlet_markers)
        self.dirichlet_dofs = np.concatenate([self.dirichlet_nodes, nn + self.dirichlet_nodes])
        interior = np.setdiff1d(np.arange(nn), self.dirichlet_nodes)
        slaves, masters = self._periodic_pairs(interior)
        self.periodic_slaves, self.periodic_masters = slaves, masters

        owner = np.arange(nn)
        owner[slaves] = masters
        free = np.ones(nn, dtype=bool)
        free[self.dirichlet_nodes] = False
        free[slaves] = False
        self.free_nodes = np.flatnonzero(free)
        col = -np.ones(nn, dtype=np.int64)
        col[self.free_nodes] = np.arange(len(self.free_nodes))
        col = col[owner]
        col[self.dirichlet_nodes] = -1
        rows = np.flatnonzero(col >= 0)
        Tn = sp.csr_matrix((np.ones(len(rows)), (rows, col[rows])), shape=(nn, len(self.free_nodes)))
        self.Tn = Tn
        self.T = sp.block_diag([Tn, Tn], format="csr")
        self.n_free = self.T.shape[1]

        nv = self.n_pres
        pslaves, pmasters = self._periodic_pairs(np.arange(nv))
        powner = np.arange(nv)
        powner[pslaves] = pmasters
        pfree = np.ones(nv, dtype=bool)
        pfree[pslaves] = False
        pcol = -np.ones(nv, dtype=np.int64)
        pcol[pfree] = np.arange(pfree.sum())
        pcol = pcol[powner]
        self.Tp = sp.csr_matrix((np.ones(nv), (np.arange(nv), pcol)), shape=(nv, int(pfree.sum())))
        self.n_pres_free = self.Tp.shape[1]

    @property
    def periodic_map(self) -> dict[int, int]:
        """Slave velocity DOF -> master velocity DOF."""
        nn = self.n_nodes
        s, m = self.periodic_slaves, self.periodic_masters
        return {int(a): int(b) for a, b in zip(np.concatenate([s, nn + s]), np.concatenate([m, nn + m]))}

    def dirichlet_values(self, bc: dict, t: float = 0.0) -> np.ndarray:
        """Raw velocity vector holding boundary data on Dirichlet DOFs and zero elsewhere.

        ``bc`` maps a Marker to a constant (ux, uz) or a vectorised callable
        ``g(x, z, t) -> (ux, uz)``. Markers listed later win at shared corners.
        """
        g = np.zeros(self.n_vel)
        missing = set(self.dirichlet_markers) - {Marker(m) for m in bc}
        if missing:
            raise ValueError(f"no boundary data for {sorted(m.name for m in missing)}")
        for marker in self.dirichlet_markers:
            nodes = self._boundary_nodes([marker])
            data = bc[marker]
            x, z = self.nodes[nodes, 0], self.nodes[nodes, 1]
            if callable(data):
                gx, gz = data(x, z, t)
            else:
                gx, gz = data
            g[nodes] = np.broadcast_to(gx, x.shape)
            g[self.n_nodes + nodes] = np.broadcast_to(gz, x.shape)
        return g

    def expand(self, ubar: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
        u = self.T @ ubar
        return u if g is None else u + g

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Free (reduced) coefficients read off a raw vector at the master DOFs."""
        nn = self.n_nodes
        return np.concatenate([u[self.free_nodes], u[nn + self.free_nodes]])

    def apply_constraints(self, u: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
        """Copy master values to periodic slaves and overwrite Dirichlet DOFs."""
        if g is None:
            g = np.zeros(self.n_vel)
            g[self.dirichlet_dofs] = u[self.dirichlet_dofs]
        return self.expand(self.restrict(u), g)

    # -- element helpers ----------------------------------------------------
    def local(self, u: np.ndarray) -> np.ndarray:
        """Element nodal values of a velocity vector, shape (E, 6, 2)."""
        u = np.asarray(u)
        if u.shape != (self.n_vel,):
            raise ValueError(f"velocity vector has shape {u.shape}, expected ({self.n_vel},)")
        nn = self.n_nodes
        return np.stack([u[:nn][self.elem_nodes], u[nn:][self.elem_nodes]], axis=2)

    def values_at_qp(self, u: np.ndarray) -> np.ndarray:
        return np.matmul(self.phi, self.local(u))

    def gradients_at_qp(self, u: np.ndarray) -> np.ndarray:
        """(E, nq, 2, 2) with [..., c, d] = d u_c / d x_d."""
        # (E, nq, 2, 6) @ (E, 1, 6, 2) gives [..., d, c]
        return np.matmul(self._grad_phi_t, self.local(u)[:, None]).transpose(0, 1, 3, 2)

    def _chunked(self, fn: Callable[[slice], np.ndarray]) -> np.ndarray:
        n = len(self.elem_area)
        if self.workers <= 1 or n < 2000:
            return fn(slice(0, n))
        bounds = np.linspace(0, n, self.workers + 1).astype(int)
        parts = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(self.workers) as pool:
            return np.concatenate(list(pool.map(fn, parts)))

    def scalar_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        return self._scalar_pattern.matrix(local)

    def vector_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        s = self.scalar_matrix(local)
        return sp.block_diag([s, s], format="csr")


@dataclass
class FlowState:
    u: np.ndarray
    p: np.ndarray
    t: float = 0.0


@dataclass
class AssembledForms:
    M: sp.csr_matrix  # velocity mass
    A: sp.csr_matrix  # velocity stiffness, int grad u : grad v
    B: sp.csr_matrix  # int q div v, (n_pres, n_vel)
    pressure_weights: np.ndarray  # int of each P1 basis function
    rule: str
    Ms: sp.csr_matrix = field(repr=False, default=None)
    As: sp.csr_matrix = field(repr=False, default=None)


def assemble_constant_forms(space: MixedSpace) -> AssembledForms:
    phi, w = space.phi, space.rule.weights
    mref = np.einsum("q,qi,qj->ij", w, phi, phi)
    Ms = space.scalar_matrix(space.elem_area[:, None, None] * mref[None])

    def stiff(s):
        g = space.grad_phi[s]
        return np.einsum("eq,eqid,eqjd->eij", space.wA[s], g, g)

    As = space.scalar_matrix(space._chunked(stiff))

    # B[k, c*nn + j] = int lambda_k d_c phi_j
    lam = space.rule.bary  # P1 basis values at quadrature points
    loc = np.einsum("eq,qk,eqjc->ekcj", space.wA, lam, space.grad_phi)  # (E, 3, 2, 6)
    nn = space.n_nodes
    tris = space.mesh.triangles
    rows = np.broadcast_to(tris[:, :, None, None], loc.shape)
    cols = np.stack([space.elem_nodes, nn + space.elem_nodes], axis=1)[:, None, :, :]
    cols = np.broadcast_to(cols, loc.shape)
    B = sp.csr_matrix((loc.ravel(), (rows.ravel(), cols.ravel())), shape=(space.n_pres, space.n_vel))
    B.sum_duplicates()

    pw = np.zeros(space.n_pres)
    np.add.at(pw, tris.ravel(), np.repeat(space.elem_area / 3.0, 3))
    return AssembledForms(
        M=sp.block_diag([Ms, Ms], format="csr"),
        A=sp.block_diag([As, As], format="csr"),
        B=B,
        pressure_weights=pw,
        rule=space.rule.name,
        Ms=Ms,
        As=As,
    )


def advection_local(space: MixedSpace, u_adv: np.ndarray) -> np.ndarray:
    """Element matrices of the skew-symmetrised advection form, shape (E, 6, 6)."""
    a = space.values_at_qp(u_adv)

    def block(s):
        adv = np.matmul(a[s][:, :, None, :], space._grad_phi_t[s])[:, :, 0, :]  # (E, nq, 6)
        weighted = space.wA[s][:, :, None] * space.phi[None]
        C = np.matmul(weighted.transpose(0, 2, 1), adv)
        return 0.5 * (C - C.transpose(0, 2, 1))

    return space._chunked(block)


def assemble_advection(space: MixedSpace, u_adv: np.ndarray) -> sp.csr_matrix:
    """N(u_adv) with w^T N v = b(u_adv, v, w); skew-symmetric."""
    return space.vector_matrix(advection_local(space, u_adv))


def gradient_modulus_at_qp(space: MixedSpace, u: np.ndarray) -> np.ndarray:
    g = space.gradients_at_qp(u)
    return np.sqrt(np.einsum("eqcd,eqcd->eq", g, g))


def eddy_viscosity_local(space: MixedSpace, u_lin: np.ndarray, cs_delta_sq: float) -> np.ndarray:
    if cs_delta_sq < 0:
        raise ValueError("(C_s delta)^2 must be non-negative")
    if cs_delta_sq == 0:
        return np.zeros((len(space.elem_area), 6, 6))
    mod = gradient_modulus_at_qp(space, u_lin)

    def block(s):
        g = space._grad_phi_t[s]
        e = g.shape[0]
        gw = (space.wA[s] * mod[s])[:, :, None, None] * g
        return np.matmul(gw.reshape(e, -1, 6).transpose(0, 2, 1), g.reshape(e, -1, 6))

    return cs_delta_sq * space._chunked(block)


def assemble_eddy_viscosity(space: MixedSpace, u_lin: np.ndarray, cs_delta_sq: float) -> sp.csr_matrix:
    """S(u_lin) with w^T S v = int (C_s delta)^2 |grad u_lin| grad v : grad w."""
    return space.vector_matrix(eddy_viscosity_local(space, u_lin, cs_delta_sq))


def apply_trilinear(space: MixedSpace, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """b(a, b, c) = 1/2 (a . grad b, c) - 1/2 (a . grad c, b), by direct quadrature."""
    av = space.values_at_qp(a)
    bv, cv = space.values_at_qp(b), space.values_at_qp(c)
    gb, gc = space.gradients_at_qp(b), space.gradients_at_qp(c)
    adv_b = np.einsum("eqd,eqcd->eqc", av, gb)
    adv_c = np.einsum("eqd,eqcd->eqc", av, gc)
    integrand = np.einsum("eqc,eqc->eq", adv_b, cv) - np.einsum("eqc,eqc->eq", adv_c, bv)
    return 0.5 * float(np.sum(space.wA * integrand))


def assemble_body_force(space: MixedSpace, f: Callable, t: float | None = None) -> np.ndarray:
    """Load vector int f . v; ``f(x, z)`` (or ``f(x, z, t)`` when t is given) is vectorised."""
    x, z = space.qpoints[..., 0], space.qpoints[..., 1]
    fx, fz = f(x, z) if t is None else f(x, z, t)
    out = np.zeros(space.n_vel)
    nn = space.n_nodes
    for comp, fc in enumerate((fx, fz)):
        loc = np.einsum("eq,qi->ei", space.wA * np.broadcast_to(fc, x.shape), space.phi)
        out[comp * nn : (comp + 1) * nn] = np.bincount(space.elem_nodes.ravel(), loc.ravel(), minlength=nn)
    return out


def interpolate(space: MixedSpace, g: Callable) -> np.ndarray:
    """Nodal P2 interpolant of a vectorised ``g(x, z) -> (gx, gz)``."""
    x, z = space.nodes[:, 0], space.nodes[:, 1]
    gx, gz = g(x, z)
    return np.concatenate([np.broadcast_to(gx, x.shape), np.broadcast_to(gz, x.shape)]).astype(float)


def interpolate_pressure(space: MixedSpace, q: Callable) -> np.ndarray:
    v = space.mesh.vertices
    return np.broadcast_to(q(v[:, 0], v[:, 1]), (space.n_pres,)).astype(float)


def l2_error(space: MixedSpace, u: np.ndarray, exact: Callable) -> float:
    """L2 norm of u - exact with exact(x, z) -> (ux, uz) sampled at quadrature points."""
    uq = space.values_at_qp(u)
    ex, ez = exact(space.qpoints[..., 0], space.qpoints[..., 1])
    d = (uq[..., 0] - ex) ** 2 + (uq[..., 1] - ez) ** 2
    return float(np.sqrt(np.sum(space.wA * d)))


def cell_gradient_modulus(space: MixedSpace, u: np.ndarray) -> np.ndarray:
    """Quadrature-averaged |grad u| per triangle."""
    mod = gradient_modulus_at_qp(space, u)
    return (space.wA * mod).sum(axis=1) / space.elem_area
