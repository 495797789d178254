"""Triangular meshes for the channel and annulus experiments.

Coordinates are (x, z): x is the streamwise (periodic) direction of the
channel and z the wall-normal one. The annulus uses the same pair as plain
Cartesian coordinates.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import delaunay


class Marker(enum.IntEnum):
    OuterCircle = 1
    InnerCircle = 2
    BottomWall = 3
    TopWall = 4
    PeriodicLeft = 5
    PeriodicRight = 6


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counter-clockwise
    boundary_edges: np.ndarray  # (nb, 2)
    boundary_markers: np.ndarray  # (nb,), Marker values
    h_max: float = field(init=False)
    h_min: float = field(init=False)
    area: float = field(init=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "boundary_markers"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        h_max, h_min, area = mesh_size(self)
        object.__setattr__(self, "h_max", h_max)
        object.__setattr__(self, "h_min", h_min)
        object.__setattr__(self, "area", area)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    def vertices_on(self, marker: Marker) -> np.ndarray:
        sel = self.boundary_edges[self.boundary_markers == int(marker)]
        return np.unique(sel)

    def digest(self) -> str:
        """Hash of the geometry and connectivity, used to match checkpoints."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def mesh_size(mesh: Mesh) -> tuple[float, float, float]:
    """Largest and smallest element diameter and the total area."""
    tris = np.asarray(mesh.triangles)
    if tris.size == 0:
        raise MeshError("mesh has no triangles")
    p = np.asarray(mesh.vertices)[tris]
    lengths = np.stack(
        [np.linalg.norm(p[:, (i + 1) % 3] - p[:, i], axis=1) for i in range(3)], axis=1
    )
    diam = lengths.max(axis=1)
    area = float(math.fsum(triangle_areas(np.asarray(mesh.vertices), tris)))
    return float(diam.max()), float(diam.min()), area


def unique_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique edges and, per triangle, the edge index opposite each vertex."""
    local = np.array([[1, 2], [2, 0], [0, 1]])
    all_edges = np.sort(triangles[:, local], axis=2).reshape(-1, 2)
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def edge_triangle_counts(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    edges, tri_edges = unique_edges(triangles)
    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
    return edges, counts


def check_mesh(mesh: Mesh, *, periodic_tol: float = 1e-12) -> None:
    """Raise MeshError unless orientation, manifoldness and marker invariants hold."""
    areas = mesh.signed_areas()
    if np.any(areas <= 0.0):
        raise MeshError(f"{int(np.sum(areas <= 0))} triangles are not counter-clockwise")
    edges, counts = edge_triangle_counts(mesh.triangles)
    if np.any(counts > 2):
        raise MeshError("edge shared by more than two triangles")
    if 2 * np.sum(counts == 2) + np.sum(counts == 1) != 3 * mesh.n_triangles:
        raise MeshError("edge count identity violated")
    boundary = {tuple(e) for e in edges[counts == 1]}
    marked = {tuple(sorted(e)) for e in mesh.boundary_edges.tolist()}
    if boundary != marked:
        raise MeshError(
            f"marked boundary edges ({len(marked)}) differ from topological boundary ({len(boundary)})"
        )
    left = mesh.vertices_on(Marker.PeriodicLeft)
    right = mesh.vertices_on(Marker.PeriodicRight)
    if len(left) or len(right):
        zl = np.sort(mesh.vertices[left, 1])
        zr = np.sort(mesh.vertices[right, 1])
        if zl.shape != zr.shape or np.max(np.abs(zl - zr)) > periodic_tol:
            raise MeshError("periodic sides do not match")


@dataclass(frozen=True)
class ChannelSpec:
    L: float = 1.0
    nz: int = 10
    nx: int = 10
    align_strip: float | None = None

    def __post_init__(self):
        if self.nz < 2 or self.nx < 2:
            raise MeshError("channel needs nx >= 2 and nz >= 2")
        if self.L <= 0:
            raise MeshError("channel width must be positive")
        if self.align_strip is not None and not 0.0 < self.align_strip < self.L:
            raise MeshError("align_strip must lie in (0, L)")


@dataclass(frozen=True)
class AnnulusSpec:
    outer_radius: float = 1.0
    inner_radius: float = 0.25
    inner_center: tuple[float, float] = (0.3, 0.0)
    m: int = 60
    n: int = 30

    def __post_init__(self):
        if self.m < 8 or self.n < 8:
            raise MeshError("annulus needs m >= 8 and n >= 8")
        if self.inner_radius <= 0 or self.outer_radius <= 0:
            raise MeshError("radii must be positive")
        if math.hypot(*self.inner_center) + self.inner_radius >= self.outer_radius:
            raise MeshError("inner disk must lie strictly inside the outer disk")


def _channel_levels(spec: ChannelSpec) -> np.ndarray:
    L, nz = spec.L, spec.nz
    if spec.align_strip is None:
        return np.linspace(0.0, L, nz + 1)
    zs = L - spec.align_strip
    n_top = min(max(1, round(nz * spec.align_strip / L)), nz - 1)
    lower = np.linspace(0.0, zs, nz - n_top + 1)
    upper = np.linspace(zs, L, n_top + 1)
    return np.concatenate([lower, upper[1:]])


def build_channel_mesh(spec: ChannelSpec) -> Mesh:
    """Structured mesh of [0, L] x [0, L] with alternating cell diagonals."""
    xs = np.linspace(0.0, spec.L, spec.nx + 1)
    zs = _channel_levels(spec)
    nx, nz = spec.nx, len(zs) - 1
    X, Z = np.meshgrid(xs, zs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Z.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(nz):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    edges, markers = [], []
    for i in range(nx):
        edges += [(vid(i, 0), vid(i + 1, 0)), (vid(i, nz), vid(i + 1, nz))]
        markers += [Marker.BottomWall, Marker.TopWall]
    for j in range(nz):
        edges += [(vid(0, j), vid(0, j + 1)), (vid(nx, j), vid(nx, j + 1))]
        markers += [Marker.PeriodicLeft, Marker.PeriodicRight]
    return Mesh(vertices, np.array(tris), np.array(edges), np.array(markers, dtype=int))


def _ring(center, radius, count, phase=0.0):
    theta = phase + 2.0 * np.pi * np.arange(count) / count
    return np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])


def annulus_points(spec: AnnulusSpec, refinement: int = 1) -> tuple[np.ndarray, int, int]:
    """Boundary points followed by seeded interior points.

    Returns (points, m, n): the first m points are on the outer circle and the
    next n on the inner one.
    """
    R, r = spec.outer_radius, spec.inner_radius
    c = np.asarray(spec.inner_center, dtype=float)
    s_out = 2.0 * np.pi * R / spec.m
    s_in = 2.0 * np.pi * r / spec.n
    s = s_out / refinement

    pts = [_ring((0.0, 0.0), R, spec.m), _ring(c, r, spec.n)]

    # graded rings around the obstacle, spacing growing from s_in to s
    rings = []
    rho, step, k = r, min(s_in, s), 0
    gap = R - (np.hypot(*c) + r)
    while step < s and rho + step < r + gap:
        rho += step * math.sqrt(3.0) / 2.0
        k += 1
        count = max(8, round(2.0 * np.pi * rho / step))
        ring = _ring(c, rho, count, phase=np.pi * k / count)
        rings.append(ring)
        step = min(step * 1.25, s)
    obstacle_reach = rho
    for ring in rings:
        keep = np.hypot(ring[:, 0], ring[:, 1]) < R - 0.6 * s
        pts.append(ring[keep])

    # concentric layers about the origin, clear of the obstacle zone
    excl = obstacle_reach + 0.6 * s
    k = 1
    while True:
        rho = R - k * s * math.sqrt(3.0) / 2.0
        if rho < 0.5 * s:
            break
        count = max(6, round(2.0 * np.pi * rho / s))
        layer = _ring((0.0, 0.0), rho, count, phase=np.pi * k / count)
        far = np.hypot(layer[:, 0] - c[0], layer[:, 1] - c[1]) > excl
        pts.append(layer[far])
        k += 1
    centre = np.zeros((1, 2))
    if np.hypot(*(centre[0] - c)) > excl and rho > -0.5 * s:
        pts.append(centre)
    return np.vstack(pts), spec.m, spec.n


def build_annulus_mesh(spec: AnnulusSpec, refinement: int = 1, method: str = "bowyer-watson") -> Mesh:
    """Delaunay mesh of the disk with an off-centre circular hole."""
    if refinement < 1:
        raise MeshError("refinement must be a positive integer")
    points, m, n = annulus_points(spec, refinement)
    if method == "bowyer-watson":
        tris = delaunay.bowyer_watson(points)
    elif method == "qhull":
        tris = delaunay.qhull_delaunay(points)
    else:
        raise ValueError(f"unknown triangulation method {method!r}")

    c = np.asarray(spec.inner_center, dtype=float)
    centroids = points[tris].mean(axis=1)
    in_hole = np.hypot(centroids[:, 0] - c[0], centroids[:, 1] - c[1]) < spec.inner_radius
    tris = tris[~in_hole]

    used = np.zeros(len(points), dtype=bool)
    used[tris] = True
    if not used.all():
        raise MeshError("hole carving left isolated vertices")

    edges, counts = edge_triangle_counts(tris)
    bnd = edges[counts == 1]
    outer = (bnd < m).all(axis=1)
    inner = ((bnd >= m) & (bnd < m + n)).all(axis=1)
    if not np.all(outer | inner) or outer.sum() != m or inner.sum() != n:
        raise MeshError("hole carving left a non-manifold boundary")
    markers = np.where(outer, int(Marker.OuterCircle), int(Marker.InnerCircle))

    areas = triangle_areas(points, tris)
    if np.any(areas < 1e-14 * spec.outer_radius**2):
        raise MeshError("degenerate triangle in annulus mesh")
    return Mesh(points, tris, bnd, markers)


# ---------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII

DEFAULT_MSH_MARKERS = {m.name: m for m in Marker}


def import_msh(path, markers: dict | None = None) -> Mesh:
    """Read a Gmsh 2.2 ASCII mesh of triangles with tagged boundary lines.

    ``markers`` maps physical-group names or integer tags to Marker values;
    by default physical names equal to Marker names are recognised.
    """
    table = dict(DEFAULT_MSH_MARKERS if markers is None else markers)
    lines = Path(path).read_text().splitlines()
    sections: dict[str, list[str]] = {}
    i = 0
    while i < len(lines):
        head = lines[i].strip()
        if head.startswith("$") and not head.startswith("$End"):
            name = head[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != f"$End{name}":
                j += 1
            if j == len(lines):
                raise MeshError(f"unterminated section ${name}")
            sections[name] = lines[i + 1 : j]
            i = j
        i += 1

    fmt = sections.get("MeshFormat")
    if not fmt:
        raise MeshError("missing $MeshFormat")
    version, ftype, _ = fmt[0].split()
    if not version.startswith("2.") or ftype != "0":
        raise MeshError(f"unsupported MSH version/format {version} {ftype}")

    names = {}
    for row in sections.get("PhysicalNames", [])[1:]:
        dim, tag, name = row.split(maxsplit=2)
        names[int(tag)] = name.strip('"')

    node_rows = sections.get("Nodes")
    if not node_rows:
        raise MeshError("missing $Nodes")
    count = int(node_rows[0])
    ids, coords = [], []
    for row in node_rows[1 : count + 1]:
        parts = row.split()
        ids.append(int(parts[0]))
        coords.append((float(parts[1]), float(parts[2])))
    index = {nid: k for k, nid in enumerate(ids)}

    tris, edges, edge_tags = [], [], []
    for row in sections.get("Elements", [])[1:]:
        parts = [int(v) for v in row.split()]
        etype, ntags = parts[1], parts[2]
        tags = parts[3 : 3 + ntags]
        nodes = [index[v] for v in parts[3 + ntags :]]
        if etype == 2:
            tris.append(nodes)
        elif etype == 1:
            if not tags or tags[0] == 0:
                raise MeshError("boundary line without a physical group")
            edges.append(nodes)
            edge_tags.append(tags[0])
        elif etype in (3, 9, 10, 16):
            raise MeshError(f"unsupported 2D element type {etype}")
    if not tris:
        raise MeshError("no triangles in mesh file")
    if not edges:
        raise MeshError("no tagged boundary lines (missing physical groups)")

    marker_values = []
    for tag in edge_tags:
        key = names.get(tag)
        if tag in table:
            marker_values.append(int(table[tag]))
        elif key is not None and key in table:
            marker_values.append(int(table[key]))
        else:
            raise MeshError(f"physical group {tag} ({key}) has no marker mapping")

    vertices = np.array(coords)
    tris = np.array(tris, dtype=np.int64)
    neg = triangle_areas(vertices, tris) < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return Mesh(vertices, tris, np.array(edges, dtype=np.int64), np.array(marker_values))


def write_msh(mesh: Mesh, path) -> None:
    """Write a mesh as Gmsh 2.2 ASCII, one physical group per marker."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames"]
    used = sorted({int(m) for m in mesh.boundary_markers})
    out.append(str(len(used) + 1))
    out += [f'1 {m} "{Marker(m).name}"' for m in used]
    out += ['2 100 "Domain"', "$EndPhysicalNames", "$Nodes", str(mesh.n_vertices)]
    out += [f"{k + 1} {x!r} {z!r} 0" for k, (x, z) in enumerate(mesh.vertices.tolist())]
    out += ["$EndNodes", "$Elements", str(len(mesh.boundary_edges) + mesh.n_triangles)]
    k = 1
    for (a, b), m in zip(mesh.boundary_edges.tolist(), mesh.boundary_markers.tolist()):
        out.append(f"{k} 1 2 {m} {m} {a + 1} {b + 1}")
        k += 1
    for a, b, c in mesh.triangles.tolist():
        out.append(f"{k} 2 2 100 100 {a + 1} {b + 1} {c + 1}")
        k += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def write_mesh_vtk(mesh: Mesh, path) -> None:
    """Legacy VTK dump: triangles plus marked boundary lines, marker as cell data."""
    nt, nb = mesh.n_triangles, len(mesh.boundary_edges)
    out = ["# vtk DataFile Version 3.0", "smaglab mesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_vertices} double")
    out += [f"{x!r} {z!r} 0.0" for x, z in mesh.vertices.tolist()]
    out.append(f"CELLS {nt + nb} {4 * nt + 3 * nb}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    out += [f"2 {a} {b}" for a, b in mesh.boundary_edges.tolist()]
    out.append(f"CELL_TYPES {nt + nb}")
    out += ["5"] * nt + ["3"] * nb
    out += [f"CELL_DATA {nt + nb}", "SCALARS marker int 1", "LOOKUP_TABLE default"]
    out += ["0"] * nt + [str(int(m)) for m in mesh.boundary_markers]
    Path(path).write_text("\n".join(out) + "\n")
