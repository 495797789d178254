"""Incremental Bowyer-Watson Delaunay triangulation of a 2D point set.

Triangles carry neighbour links so that point location is a short walk and
the cavity of an inserted point is collected by a breadth-first search.
"""
from __future__ import annotations

import numpy as np


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


class _Triangulation:
    """Triangulation closed by ghost triangles sharing one vertex at infinity.

    A ghost ``(x, y, INF)`` sits outside the hull edge ``x -> y``; its
    circumcircle degenerates to the open half-plane left of that edge.
    """

    def __init__(self, pts: np.ndarray):
        self.x = pts[:, 0].tolist()
        self.y = pts[:, 1].tolist()
        self.inf = len(pts)
        self.verts: list[list[int]] = []
        self.nbrs: list[list[int]] = []
        self.alive: list[bool] = []
        self.circ: list[tuple[float, float, float] | None] = []
        self.last = 0

    def add(self, a: int, b: int, c: int) -> int:
        self.verts.append([a, b, c])
        self.nbrs.append([-1, -1, -1])
        self.alive.append(True)
        if self.inf in (a, b, c):
            self.circ.append(None)
            return len(self.verts) - 1
        x, y = self.x, self.y
        ax, ay = x[a], y[a]
        bx, by = x[b] - ax, y[b] - ay
        cx, cy = x[c] - ax, y[c] - ay
        d = 2.0 * (bx * cy - by * cx)
        b2 = bx * bx + by * by
        c2 = cx * cx + cy * cy
        ux = (cy * b2 - by * c2) / d
        uy = (bx * c2 - cx * b2) / d
        self.circ.append((ax + ux, ay + uy, ux * ux + uy * uy))
        return len(self.verts) - 1

    def hull_edge(self, t: int) -> tuple[int, int, int]:
        """Finite edge ``(x, y)`` of ghost ``t`` and the slot of its infinite vertex."""
        v = self.verts[t]
        k = v.index(self.inf)
        return v[(k + 1) % 3], v[(k + 2) % 3], k

    def outside(self, t: int, px: float, py: float) -> bool:
        a, b, _ = self.hull_edge(t)
        x, y = self.x, self.y
        o = _orient(x[a], y[a], x[b], y[b], px, py)
        if o != 0.0:
            return o > 0.0
        # on the supporting line: inside the circle only strictly between a and b
        return (px - x[a]) * (px - x[b]) + (py - y[a]) * (py - y[b]) < 0.0

    def in_circle(self, t: int, px: float, py: float) -> bool:
        circ = self.circ[t]
        if circ is None:
            return self.outside(t, px, py)
        cx, cy, r2 = circ
        dx, dy = px - cx, py - cy
        return dx * dx + dy * dy < r2 * (1.0 - 1e-12)

    def link(self, tris: list[int]) -> None:
        edges = {}
        for t in tris:
            v = self.verts[t]
            for i in range(3):
                edges[(v[(i + 1) % 3], v[(i + 2) % 3])] = (t, i)
        for (a, b), (t, i) in edges.items():
            other = edges.get((b, a))
            if other is not None:
                self.nbrs[t][i] = other[0]

    def locate(self, px: float, py: float) -> int:
        x, y = self.x, self.y
        t = self.last if self.alive[self.last] else self.alive.index(True)
        for _ in range(4 * len(self.verts) + 10):
            if self.circ[t] is None:
                if self.outside(t, px, py):
                    return t
                t = self.nbrs[t][self.hull_edge(t)[2]]
                continue
            v = self.verts[t]
            for i in range(3):
                a, b = v[(i + 1) % 3], v[(i + 2) % 3]
                if _orient(x[a], y[a], x[b], y[b], px, py) < 0.0:
                    t = self.nbrs[t][i]
                    break
            else:
                return t
        # walk failed to terminate (degenerate input); fall back to a scan
        for t, ok in enumerate(self.alive):
            if not ok:
                continue
            if self.circ[t] is None:
                if self.outside(t, px, py):
                    return t
                continue
            v = self.verts[t]
            if all(
                _orient(x[v[(i + 1) % 3]], y[v[(i + 1) % 3]], x[v[(i + 2) % 3]], y[v[(i + 2) % 3]], px, py) >= 0.0
                for i in range(3)
            ):
                return t
        raise RuntimeError("point location failed")

    def insert(self, p: int) -> None:
        x, y = self.x, self.y
        px, py = x[p], y[p]
        start = self.locate(px, py)
        for q in self.verts[start]:
            if q != self.inf and x[q] == px and y[q] == py:
                raise ValueError(f"duplicate point {p}")
        bad = {start}
        stack = [start]
        while stack:
            t = stack.pop()
            for n in self.nbrs[t]:
                if n not in bad and self.in_circle(n, px, py):
                    bad.add(n)
                    stack.append(n)

        # enlarge the cavity until it is star-shaped with respect to p
        while True:
            boundary = []
            grow = None
            for t in bad:
                v = self.verts[t]
                for i in range(3):
                    n = self.nbrs[t][i]
                    if n in bad:
                        continue
                    a, b = v[(i + 1) % 3], v[(i + 2) % 3]
                    if self.inf not in (a, b) and _orient(x[a], y[a], x[b], y[b], px, py) <= 0.0:
                        grow = n
                        break
                    boundary.append((a, b, n))
                if grow is not None:
                    break
            if grow is None:
                break
            bad.add(grow)

        for t in bad:
            self.alive[t] = False

        # new triangles (a, b, p); neighbour opposite p is the outside triangle
        spoke: dict[int, tuple[int, int]] = {}
        for a, b, n in boundary:
            t = self.add(a, b, p)
            self.nbrs[t][2] = n
            nv = self.verts[n]
            for j in range(3):
                if nv[j] != a and nv[j] != b:
                    self.nbrs[n][j] = t
                    break
            # edge (b, p) is opposite a (slot 0); edge (p, a) opposite b (slot 1)
            for vert, slot in ((b, 0), (a, 1)):
                if vert in spoke:
                    other, oslot = spoke.pop(vert)
                    self.nbrs[t][slot] = other
                    self.nbrs[other][oslot] = t
                else:
                    spoke[vert] = (t, slot)
        self.last = len(self.verts) - 1


def bowyer_watson(points: np.ndarray) -> np.ndarray:
    """Delaunay triangles (counter-clockwise index triples) of ``points``."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 3:
        raise ValueError("need at least three points")
    tri = _Triangulation(points)
    a, b = 0, 1
    if points[0, 0] == points[1, 0] and points[0, 1] == points[1, 1]:
        raise ValueError("duplicate point 1")
    for c in range(2, n):
        o = _orient(*points[a], *points[b], *points[c])
        if o != 0.0:
            break
    else:
        raise ValueError("all points are collinear")
    if o < 0.0:
        a, b = b, a
    inf = tri.inf
    seed = [tri.add(a, b, c), tri.add(b, a, inf), tri.add(c, b, inf), tri.add(a, c, inf)]
    tri.link(seed)
    for p in range(n):
        if p not in (a, b, c):
            tri.insert(p)
    out = [v for v, ok in zip(tri.verts, tri.alive) if ok and inf not in v]
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def qhull_delaunay(points: np.ndarray) -> np.ndarray:
    """Delaunay triangles from scipy's Qhull wrapper, oriented counter-clockwise."""
    from scipy.spatial import Delaunay

    points = np.asarray(points, dtype=float)
    simp = Delaunay(points).simplices.astype(np.int64)
    p = points[simp]
    area = _orient(p[:, 0, 0], p[:, 0, 1], p[:, 1, 0], p[:, 1, 1], p[:, 2, 0], p[:, 2, 1])
    flip = area < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    return simp


def circumcircle_violations(points: np.ndarray, triangles: np.ndarray, rtol: float = 1e-9) -> int:
    """Count (triangle, vertex) pairs where a vertex lies strictly inside a circumcircle."""
    from scipy.spatial import cKDTree

    p = points[triangles]
    a = p[:, 0]
    b = p[:, 1] - a
    c = p[:, 2] - a
    d = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    b2 = (b**2).sum(1)
    c2 = (c**2).sum(1)
    ux = (c[:, 1] * b2 - b[:, 1] * c2) / d
    uy = (b[:, 0] * c2 - c[:, 0] * b2) / d
    centres = a + np.column_stack([ux, uy])
    radii = np.hypot(ux, uy)
    tree = cKDTree(points)
    bad = 0
    for k, (cen, r) in enumerate(zip(centres, radii)):
        for j in tree.query_ball_point(cen, r * (1.0 - rtol)):
            if j not in triangles[k]:
                bad += 1
    return bad
