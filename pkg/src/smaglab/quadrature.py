"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TriangleRule:
    name: str
    degree: int
    bary: np.ndarray  # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,), sum to 1 (multiply by element area)

    @property
    def points(self) -> np.ndarray:
        """Reference coordinates (xi, eta) of the quadrature points."""
        return self.bary[:, 1:]


def _strang_fix_7() -> TriangleRule:
    s15 = np.sqrt(15.0)
    a1 = (6.0 - s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    w1 = (155.0 - s15) / 1200.0
    w2 = (155.0 + s15) / 1200.0
    bary = [[1 / 3, 1 / 3, 1 / 3]]
    weights = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        bary += [[b, a, a], [a, b, a], [a, a, b]]
        weights += [w, w, w]
    return TriangleRule("strang-fix-7", 5, np.array(bary), np.array(weights))


def _midpoint_3() -> TriangleRule:
    bary = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    return TriangleRule("edge-midpoint-3", 2, bary, np.full(3, 1.0 / 3.0))


DEGREE5 = _strang_fix_7()
DEGREE2 = _midpoint_3()


def gauss_legendre_segment(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points mapped to [0, 1] with weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
