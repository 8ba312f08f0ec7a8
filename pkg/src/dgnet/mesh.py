"""Structured square mesh of (0,1)^2, quadrature, and DOF/image reshaping.

The mesh is a uniform n x n grid of square elements of side h = 1/n.
Element (i,j) covers (i*h,(i+1)*h) x (j*h,(j+1)*h) and has flat index
j*n + i.  Each element carries four Q1 degrees of freedom, numbered
counterclockwise from the bottom-left corner of the reference square:

    psi0 -> (-1,-1),  psi1 -> (+1,-1),  psi2 -> (+1,+1),  psi3 -> (-1,+1)

The DOF vector of length 4*n^2 stores them as [elem0: d0..d3, elem1: ...].
"""

from typing import NamedTuple

import numpy as np


class Edge(NamedTuple):
    """Mesh edge.  e2 is -1 for boundary edges.

    For interior edges the unit normal points from e1 into e2: vertical
    edges use (1,0) with e1 the left element, horizontal edges (0,1)
    with e1 the bottom element.  Boundary edges store the outward normal.
    """

    e1: int
    e2: int
    normal: tuple


class QuadratureRule(NamedTuple):
    points: np.ndarray
    weights: np.ndarray
    order: int


class StructuredMesh:
    """Uniform mesh of n x n square elements on the unit square."""

    def __init__(self, n):
        if n < 2:
            raise ValueError(f"build_mesh requires n >= 2, got {n}")
        self.n = int(n)
        self.h = 1.0 / self.n
        self.interior_edges = []
        self.boundary_edges = []
        # vertical interior edges, row-major over rows then gaps
        for j in range(n):
            for i in range(n - 1):
                self.interior_edges.append(Edge(j * n + i, j * n + i + 1, (1.0, 0.0)))
        # horizontal interior edges
        for j in range(n - 1):
            for i in range(n):
                self.interior_edges.append(Edge(j * n + i, (j + 1) * n + i, (0.0, 1.0)))
        for j in range(n):
            self.boundary_edges.append(Edge(j * n, -1, (-1.0, 0.0)))
            self.boundary_edges.append(Edge(j * n + n - 1, -1, (1.0, 0.0)))
        for i in range(n):
            self.boundary_edges.append(Edge(i, -1, (0.0, -1.0)))
            self.boundary_edges.append(Edge((n - 1) * n + i, -1, (0.0, 1.0)))

    @property
    def num_elements(self):
        return self.n * self.n

    def element_origin(self, e):
        """Lower-left corner (x0, y0) of element with flat index e."""
        j, i = divmod(e, self.n)
        return i * self.h, j * self.h


def build_mesh(n):
    """Build the structured mesh; n is the number of elements per side."""
    return StructuredMesh(n)


def gauss_rule(q):
    """Gauss-Legendre rule with q points on [-1,1]."""
    if q not in (1, 2, 3, 4, 5):
        raise ValueError(f"gauss_rule supports q in 1..5, got {q}")
    pts, wts = np.polynomial.legendre.leggauss(q)
    return QuadratureRule(pts, wts, q)


class DofLayout:
    """Maps DOF vectors of length 4*n^2 to 2n x 2n images and back.

    Pixel rows are indexed bottom-up in y.  Element (i,j) owns the 2x2
    pixel block with lower-left pixel (2j, 2i); its local DOFs land on
    the block corners matching their basis nodes.
    """

    def __init__(self, n):
        if n < 1:
            raise ValueError(f"DofLayout requires n >= 1, got {n}")
        self.n = int(n)
        self.side = 2 * self.n


def vector_to_image(v, layout):
    n = layout.n
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (4 * n * n,):
        raise ValueError(f"expected DOF vector of length {4 * n * n}, got shape {v.shape}")
    V = v.reshape(n, n, 4)
    img = np.empty((2 * n, 2 * n), dtype=np.float64)
    img[0::2, 0::2] = V[:, :, 0]
    img[0::2, 1::2] = V[:, :, 1]
    img[1::2, 1::2] = V[:, :, 2]
    img[1::2, 0::2] = V[:, :, 3]
    return img


def image_to_vector(img, layout):
    n = layout.n
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (2 * n, 2 * n):
        raise ValueError(f"expected {2 * n}x{2 * n} image, got shape {img.shape}")
    V = np.empty((n, n, 4), dtype=np.float64)
    V[:, :, 0] = img[0::2, 0::2]
    V[:, :, 1] = img[0::2, 1::2]
    V[:, :, 2] = img[1::2, 1::2]
    V[:, :, 3] = img[1::2, 0::2]
    return V.reshape(4 * n * n)
