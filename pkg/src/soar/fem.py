"""P1 finite element machinery on triangulated disks.

Exact element integration for piecewise-constant coefficients: stiffness
from the P1 gradients, mass from the area/12 pattern, boundary loads from
exact edge quadrature of P1 traces.  Linear systems are solved by
diagonally preconditioned conjugate gradients (relative residual 1e-10,
cap 10n); Dirichlet conditions are eliminated symmetrically so the interior
block stays SPD.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Coefficients:
    """Diffusion/absorption fields (scalar or per-triangle) and Robin constant.

    D and mu_a must be bounded away from zero; A_robin enters only the Robin
    forward solve used for synthetic data, g_minus is the incoming flux
    (zero in a dark environment).
    """

    D: object = 1.0
    mu_a: object = 1.0
    A_robin: float = 3.2
    g_minus: float = 0.0

    def per_triangle(self, n_triangles):
        d = np.broadcast_to(np.asarray(self.D, dtype=float), (n_triangles,))
        m = np.broadcast_to(np.asarray(self.mu_a, dtype=float), (n_triangles,))
        if np.any(d <= 0.0) or np.any(m <= 0.0):
            raise ValueError("D and mu_a must be strictly positive")
        return d, m


class CgError(RuntimeError):
    def __init__(self, achieved, target, iterations):
        super().__init__(
            f"CG failed to converge: residual {achieved:.3e} > {target:.3e} "
            f"after {iterations} iterations"
        )
        self.achieved = achieved


def pcg(a_mat, b, x0=None, rtol=1e-10, max_factor=10):
    """Diagonally preconditioned conjugate gradients for SPD sparse a_mat.

    Stops at ||b - A x|| <= rtol * ||b||; raises CgError past 10n
    iterations.  x0 warm-starts the iteration (reconstruction loops solve a
    slowly moving sequence of systems).
    """
    n = b.shape[0]
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros(n)
    target = rtol * norm_b
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - a_mat @ x if x0 is not None else b.copy()
    if np.linalg.norm(r) <= target:
        return x
    dinv = 1.0 / a_mat.diagonal()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    cap = max_factor * n
    for _ in range(cap):
        ap = a_mat @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= target:
            return x
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CgError(np.linalg.norm(r), target, cap)


@dataclass
class FemSystem:
    """Assembled matrices of one mesh/coefficient pair.

    S stiffness, M absorption-weighted mass, C plain mass, L = S + M,
    M0 the columns of M at the permissible nodes, C0 the plain mass block
    on the permissible nodes, boundary_mass the edge mass matrix behind
    Neumann/Robin loads.
    """

    mesh: object
    coeff: Coefficients
    S: sp.csr_matrix
    M: sp.csr_matrix
    C: sp.csr_matrix
    L: sp.csr_matrix
    M0: sp.csr_matrix
    C0: sp.csr_matrix
    boundary_mass: sp.csr_matrix
    boundary_index: np.ndarray
    interior_index: np.ndarray
    L_II: sp.csr_matrix
    L_IB: sp.csr_matrix

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    @property
    def omega0_nodes(self):
        return self.mesh.omega0_nodes

    def boundary_load(self, g2):
        """z_j = integral of the P1 trace of g2 against phi_j over the boundary."""
        g_full = np.zeros(self.n_nodes)
        g_full[self.boundary_index] = g2
        return self.boundary_mass @ g_full


def assemble(mesh, coeff):
    """Assemble the P1 system for a mesh and admissible coefficients."""
    n = mesh.n_nodes
    tris = mesh.triangles
    pts = mesh.nodes
    d_tri, m_tri = coeff.per_triangle(mesh.n_triangles)

    areas = mesh.triangle_areas()
    bad = np.flatnonzero(areas <= 0.0)
    if bad.size:
        raise ValueError(f"degenerate triangle {bad[0]} (area {areas[bad[0]]:.3e})")

    # P1 gradients: for vertices (p0,p1,p2), grad phi_i = rot(p_{i+2}-p_{i+1})/(2A)
    p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    g = np.empty((mesh.n_triangles, 3, 2))
    for i, (pa, pb) in enumerate(((p2, p1), (p0, p2), (p1, p0))):
        e = pa - pb
        g[:, i, 0] = -e[:, 1]
        g[:, i, 1] = e[:, 0]
    g /= (2.0 * areas)[:, None, None]

    rows = np.repeat(tris, 3, axis=1).ravel()  # i i i j j j k k k per triangle
    cols = np.tile(tris, (1, 3)).ravel()

    s_elem = np.einsum("tix,tjx->tij", g, g) * (d_tri * areas)[:, None, None]
    mass_pattern = (np.ones((3, 3)) + np.eye(3)) / 12.0
    m_elem = mass_pattern[None, :, :] * (m_tri * areas)[:, None, None]
    c_elem = mass_pattern[None, :, :] * areas[:, None, None]

    def build(elem):
        mat = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=(n, n))
        return mat.tocsr()

    S = build(s_elem)
    M = build(m_elem)
    C = build(c_elem)
    L = (S + M).tocsr()

    # boundary edge mass: per edge of length l, [[l/3, l/6], [l/6, l/3]]
    be = mesh.boundary_edges
    lengths = np.linalg.norm(pts[be[:, 1]] - pts[be[:, 0]], axis=1)
    er = np.concatenate([be[:, 0], be[:, 0], be[:, 1], be[:, 1]])
    ec = np.concatenate([be[:, 0], be[:, 1], be[:, 0], be[:, 1]])
    ev = np.concatenate([lengths / 3.0, lengths / 6.0, lengths / 6.0, lengths / 3.0])
    boundary_mass = sp.coo_matrix((ev, (er, ec)), shape=(n, n)).tocsr()

    boundary_index = np.unique(be)
    interior_index = np.setdiff1d(np.arange(n), boundary_index)
    idx0 = mesh.omega0_nodes
    M0 = M[:, idx0].tocsr()
    C0 = C[idx0][:, idx0].tocsr()
    return FemSystem(
        mesh=mesh,
        coeff=coeff,
        S=S,
        M=M,
        C=C,
        L=L,
        M0=M0,
        C0=C0,
        boundary_mass=boundary_mass,
        boundary_index=boundary_index,
        interior_index=interior_index,
        L_II=L[interior_index][:, interior_index].tocsr(),
        L_IB=L[interior_index][:, boundary_index].tocsr(),
    )


def solve_dirichlet(sys, f, g1, x0=None):
    """u with L u = M0 f in the interior and u = g1 on the boundary.

    f lives on the permissible nodes, g1 on the boundary nodes (same order
    as sys.boundary_index).  Symmetric elimination keeps the interior block
    SPD for CG.
    """
    rhs = sys.M0 @ np.asarray(f, dtype=float)
    g1 = np.broadcast_to(np.asarray(g1, dtype=float), sys.boundary_index.shape)
    u = np.zeros(sys.n_nodes)
    u[sys.boundary_index] = g1
    b = rhs[sys.interior_index] - sys.L_IB @ g1
    u[sys.interior_index] = pcg(sys.L_II, b, x0=x0)
    return u


def solve_neumann(sys, f, g2, x0=None):
    """u with L u = M0 f + z(g2); L is SPD because mu_a >= mu_0 > 0."""
    g2 = np.broadcast_to(np.asarray(g2, dtype=float), sys.boundary_index.shape)
    b = sys.M0 @ np.asarray(f, dtype=float) + sys.boundary_load(g2)
    return pcg(sys.L, b, x0=x0)


def solve_robin(sys, f, g_minus=None, x0=None):
    """Forward Robin problem u + 2 A D du/dn = g_minus used for data generation."""
    a = sys.coeff.A_robin
    g_minus = sys.coeff.g_minus if g_minus is None else g_minus
    lhs = (sys.L + sys.boundary_mass / (2.0 * a)).tocsr()
    gm = np.broadcast_to(np.asarray(g_minus, dtype=float), sys.boundary_index.shape)
    g_full = np.zeros(sys.n_nodes)
    g_full[sys.boundary_index] = gm
    b = sys.M0 @ np.asarray(f, dtype=float) + (sys.boundary_mass @ g_full) / (2.0 * a)
    return pcg(lhs, b, x0=x0)


def adjoint_pair(sys, v, x0_d=None, x0_n=None):
    """w_D (zero trace) and w_N with L w = C v, the adjoint-state solves."""
    rhs = sys.C @ v
    w_d = np.zeros(sys.n_nodes)
    w_d[sys.interior_index] = pcg(sys.L_II, rhs[sys.interior_index], x0=x0_d)
    w_n = pcg(sys.L, rhs, x0=x0_n)
    return w_d, w_n
