"""Triangulated unit disk and permissible-region marking.

The built-in mesher lays nodes on concentric rings (ring i carries 6i nodes
at radius i/R), which keeps boundary nodes exactly on the unit circle and
makes the boundary trace of a refinement a superset of the coarse one, so
measurement data generated on a finer mesh transfers to the reconstruction
mesh without interpolation error at shared angles.
"""

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class Mesh:
    """Conforming triangulation with a marked permissible source region.

    nodes           (n, 2) coordinates
    triangles       (m, 3) node indices, positively oriented
    boundary_edges  (b, 2) node index pairs along the outer boundary
    omega0_nodes    sorted node indices strictly inside the source region
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    omega0_nodes: np.ndarray

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def boundary_nodes(self):
        """Boundary node indices in traversal order along the edges."""
        return self.boundary_edges[:, 0]

    def triangle_areas(self):
        p = self.nodes
        t = self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def disk_mesh(level):
    """Triangulated unit disk; level 0 has 61 nodes, each level quadruples.

    Ring count is 4 * 2^level, so meshes at successive levels share all
    boundary node angles of the coarser ones.
    """
    if level < 0:
        raise ValueError("refinement level must be >= 0")
    return disk_mesh_rings(4 * 2**level)


def disk_mesh_rings(rings):
    """Disk mesh with a given number of concentric rings (>= 1)."""
    if rings < 1:
        raise ValueError("need at least one ring")
    R = int(rings)

    def base(i):
        return 1 + 3 * i * (i - 1)

    def idx(i, j):
        return base(i) + (j % (6 * i))

    n_nodes = 1 + 3 * R * (R + 1)
    nodes = np.zeros((n_nodes, 2))
    for i in range(1, R + 1):
        ang = 2.0 * np.pi * np.arange(6 * i) / (6 * i)
        r = i / R
        nodes[base(i) : base(i) + 6 * i, 0] = r * np.cos(ang)
        nodes[base(i) : base(i) + 6 * i, 1] = r * np.sin(ang)
    # outer ring exactly on the unit circle (cos/sin already give |x| = 1)

    tris = []
    for i in range(1, R + 1):
        for s in range(6):
            inner = [idx(i - 1, s * (i - 1) + j) for j in range(i)] if i > 1 else [0]
            outer = [idx(i, s * i + j) for j in range(i + 1)]
            for j in range(i):
                tris.append((outer[j], outer[j + 1], inner[min(j, len(inner) - 1)]))
            for j in range(i - 1):
                tris.append((inner[j], outer[j + 1], inner[j + 1]))
    triangles = np.asarray(tris, dtype=int)

    # enforce positive orientation
    p = nodes
    d1 = p[triangles[:, 1]] - p[triangles[:, 0]]
    d2 = p[triangles[:, 2]] - p[triangles[:, 0]]
    flip = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0.0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    edges = np.asarray(
        [(idx(R, j), idx(R, j + 1)) for j in range(6 * R)], dtype=int
    )
    return Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=edges,
        omega0_nodes=np.arange(n_nodes),
    )


# ---------------------------------------------------------------------------
# permissible regions


@dataclass(frozen=True)
class Square:
    center: tuple
    half_width: float

    def contains(self, xy):
        dx = np.abs(xy[:, 0] - self.center[0])
        dy = np.abs(xy[:, 1] - self.center[1])
        return (dx < self.half_width) & (dy < self.half_width)


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float

    def contains(self, xy):
        dx = xy[:, 0] - self.center[0]
        dy = xy[:, 1] - self.center[1]
        return dx * dx + dy * dy < self.radius**2


@dataclass(frozen=True)
class Union:
    regions: tuple

    def contains(self, xy):
        out = np.zeros(xy.shape[0], dtype=bool)
        for region in self.regions:
            out |= region.contains(xy)
        return out


@dataclass(frozen=True)
class WholeDomain:
    def contains(self, xy):
        return np.ones(xy.shape[0], dtype=bool)


def mark_omega0(mesh, region):
    """New mesh with omega0_nodes = nodes strictly inside the region."""
    inside = region.contains(mesh.nodes)
    picked = np.flatnonzero(inside)
    if picked.size == 0:
        raise ValueError("permissible region contains no mesh nodes")
    return replace(mesh, omega0_nodes=picked)


def region_from_config(spec):
    """Region from a config dict: {"kind": "square"|"disk"|"union"|"all", ...}."""
    kind = spec.get("kind")
    if kind == "square":
        return Square(tuple(spec["center"]), float(spec["half_width"]))
    if kind == "disk":
        return Disk(tuple(spec["center"]), float(spec["radius"]))
    if kind == "union":
        return Union(tuple(region_from_config(r) for r in spec["regions"]))
    if kind == "all":
        return WholeDomain()
    raise ValueError(f"unknown region kind {kind!r}; expected square, disk, union or all")


# ---------------------------------------------------------------------------
# plain-text mesh files


def save_mesh(mesh, prefix):
    """Write <prefix>.node / .ele / .edge text files (byte-deterministic)."""
    with open(f"{prefix}.node", "w") as fh:
        fh.write(f"{mesh.n_nodes}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {x:.17g} {y:.17g}\n")
    with open(f"{prefix}.ele", "w") as fh:
        fh.write(f"{mesh.n_triangles}\n")
        for i, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"{i} {a} {b} {c}\n")
    with open(f"{prefix}.edge", "w") as fh:
        fh.write(f"{len(mesh.boundary_edges)}\n")
        for i, (a, b) in enumerate(mesh.boundary_edges):
            fh.write(f"{i} {a} {b}\n")


def load_mesh(prefix):
    """Read a mesh written by save_mesh; omega0 defaults to all nodes."""
    nodes = _read_table(f"{prefix}.node", 2, float)
    triangles = _read_table(f"{prefix}.ele", 3, int)
    edges = _read_table(f"{prefix}.edge", 2, int)
    return Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=edges,
        omega0_nodes=np.arange(nodes.shape[0]),
    )


def _read_table(path, width, dtype):
    with open(path) as fh:
        count = int(fh.readline())
        rows = np.loadtxt(fh, dtype=dtype, ndmin=2)
    if rows.shape[0] != count:
        raise ValueError(f"{path}: header says {count} rows, found {rows.shape[0]}")
    return rows[:, 1 : 1 + width].astype(dtype)
