"""Coarse grid over a nested fine mesh: elements, neighborhoods, oversampling, coloring.

Coarse elements are numbered row-major, ``ey * N + ex``; coarse nodes as
``py * (N + 1) + px``. Only interior coarse nodes own a neighborhood.
All index sets are sorted ascending.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DecompositionError
from .fem import FineMesh


@dataclass(frozen=True)
class Region:
    """A rectangle of whole coarse elements, as fine index sets."""

    elements: np.ndarray
    cells: np.ndarray
    nodes: np.ndarray  # closed: every fine node of the rectangle
    interior: np.ndarray  # open: nodes strictly inside (never on the domain boundary)


@dataclass(frozen=True, eq=False)
class CoarseDecomposition:
    mesh: FineMesh
    N: int
    layers: int

    @property
    def H(self) -> float:
        return 1.0 / self.N

    @property
    def m(self) -> int:
        """Fine cells per coarse cell side."""
        return self.mesh.n // self.N

    @property
    def n_elements(self) -> int:
        return self.N * self.N

    def element_xy(self, i: int) -> tuple[int, int]:
        return i % self.N, i // self.N

    def region(self, ex0: int, ex1: int, ey0: int, ey1: int) -> Region:
        """Coarse elements ex0 <= ex < ex1, ey0 <= ey < ey1 (clipped to the domain)."""
        N, m, n = self.N, self.m, self.mesh.n
        ex0, ey0 = max(ex0, 0), max(ey0, 0)
        ex1, ey1 = min(ex1, N), min(ey1, N)
        ex, ey = np.meshgrid(np.arange(ex0, ex1), np.arange(ey0, ey1))
        elements = np.sort((ey * N + ex).ravel())
        cx, cy = np.meshgrid(np.arange(ex0 * m, ex1 * m), np.arange(ey0 * m, ey1 * m))
        cells = np.sort((cy * n + cx).ravel())
        ix, iy = np.meshgrid(np.arange(ex0 * m, ex1 * m + 1), np.arange(ey0 * m, ey1 * m + 1))
        nodes = np.sort((iy * (n + 1) + ix).ravel())
        ix, iy = np.meshgrid(np.arange(ex0 * m + 1, ex1 * m), np.arange(ey0 * m + 1, ey1 * m))
        interior = np.sort((iy * (n + 1) + ix).ravel())
        return Region(elements, cells, nodes, interior)

    def element(self, i: int) -> Region:
        return self._elements[i]

    @cached_property
    def _elements(self) -> list[Region]:
        out = []
        for i in range(self.n_elements):
            ex, ey = self.element_xy(i)
            out.append(self.region(ex, ex + 1, ey, ey + 1))
        return out

    def oversampled(self, i: int, layers: int | None = None) -> Region:
        """K_i enlarged by ``layers`` rings of coarse elements, clipped to the domain."""
        ell = self.layers if layers is None else layers
        if ell < 0:
            raise DecompositionError("oversampling layers must be >= 0")
        ex, ey = self.element_xy(i)
        return self.region(ex - ell, ex + ell + 1, ey - ell, ey + ell + 1)

    # coarse nodes -------------------------------------------------------

    @cached_property
    def interior_coarse_nodes(self) -> np.ndarray:
        px, py = np.meshgrid(np.arange(1, self.N), np.arange(1, self.N))
        return np.sort((py * (self.N + 1) + px).ravel())

    def coarse_node_xy(self, p: int) -> tuple[int, int]:
        return p % (self.N + 1), p // (self.N + 1)

    def neighborhood(self, p: int) -> Region:
        """omega_p: union of the coarse elements sharing coarse node ``p``."""
        px, py = self.coarse_node_xy(p)
        if not (0 < px < self.N and 0 < py < self.N):
            raise DecompositionError(f"coarse node {p} is on the boundary and has no neighborhood")
        return self.region(px - 1, px + 1, py - 1, py + 1)

    @cached_property
    def colors(self) -> np.ndarray:
        """Color (0..3) of each interior coarse node, by coordinate parity."""
        px = self.interior_coarse_nodes % (self.N + 1)
        py = self.interior_coarse_nodes // (self.N + 1)
        return 2 * (py % 2) + (px % 2)

    @cached_property
    def element_colors(self) -> np.ndarray:
        i = np.arange(self.n_elements)
        return 2 * ((i // self.N) % 2) + (i % self.N) % 2


def build_coarse_decomposition(mesh: FineMesh, N: int, layers: int = 2) -> CoarseDecomposition:
    if N < 1 or mesh.n % N != 0:
        raise DecompositionError(f"fine n={mesh.n} is not a multiple of coarse N={N}")
    if layers < 0:
        raise DecompositionError("oversampling layers must be >= 0")
    return CoarseDecomposition(mesh, int(N), int(layers))


def partition_of_unity(decomp: CoarseDecomposition) -> np.ndarray:
    """Coarse bilinear hats sampled at fine nodes, one row per coarse node (all (N+1)^2)."""
    xy = decomp.mesh.coords
    H, N = decomp.H, decomp.N
    p = np.arange((N + 1) ** 2)
    cx, cy = (p % (N + 1)) * H, (p // (N + 1)) * H
    hx = np.clip(1.0 - np.abs(xy[None, :, 0] - cx[:, None]) / H, 0.0, None)
    hy = np.clip(1.0 - np.abs(xy[None, :, 1] - cy[:, None]) / H, 0.0, None)
    return hx * hy


def pou_gradient_sum(decomp: CoarseDecomposition) -> np.ndarray:
    """sum_i |grad chi_i|^2 at each fine cell center (closed form for bilinear hats)."""
    centers = decomp.mesh.cell_centers()
    H = decomp.H
    xi = (centers[:, 0] / H) % 1.0
    eta = (centers[:, 1] / H) % 1.0
    return 2.0 * ((1 - eta) ** 2 + eta**2 + (1 - xi) ** 2 + xi**2) / H**2


def color_neighborhoods(decomp: CoarseDecomposition) -> dict[int, int]:
    return {int(p): int(c) for p, c in zip(decomp.interior_coarse_nodes, decomp.colors)}
