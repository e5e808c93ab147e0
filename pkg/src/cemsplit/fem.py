"""Bilinear (Q1) finite elements on a uniform grid of the unit square.

Nodes and cells are numbered row-major: node ``(ix, iy)`` has index
``iy * (n + 1) + ix`` and cell ``(cx, cy)`` has index ``cy * n + cx``.
Cell-wise coefficients (diffusivity, weights) are piecewise constant, so the
2x2 Gauss rule used for the element matrices is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConfigError, LoadError, MeshError, SolverError, SymmetryError

# ---------------------------------------------------------------------------
# mesh


@dataclass(frozen=True, eq=False)
class FineMesh:
    n: int
    cells: np.ndarray  # (n*n, 4) node ids, counter-clockwise from the lower-left corner
    coords: np.ndarray  # (node_count, 2)
    boundary: np.ndarray  # bool mask over nodes

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def node_count(self) -> int:
        return (self.n + 1) ** 2

    @property
    def cell_count(self) -> int:
        return self.n * self.n

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.n + 1) + np.asarray(ix)

    def cell_index(self, cx, cy):
        return np.asarray(cy) * self.n + np.asarray(cx)

    def nearest_node(self, x: float, y: float) -> int:
        return int(self.node_index(int(round(x * self.n)), int(round(y * self.n))))

    def cell_centers(self) -> np.ndarray:
        c = (np.arange(self.n) + 0.5) / self.n
        cx, cy = np.meshgrid(c, c)
        return np.column_stack([cx.ravel(), cy.ravel()])


def build_fine_mesh(n: int) -> FineMesh:
    if int(n) != n or n < 2:
        raise MeshError(f"fine mesh needs n >= 2 cells per side, got {n}")
    n = int(n)
    ix, iy = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    coords = np.column_stack([ix.ravel(), iy.ravel()]) / n
    cx, cy = np.meshgrid(np.arange(n), np.arange(n))
    ll = (cy * (n + 1) + cx).ravel()
    cells = np.column_stack([ll, ll + 1, ll + n + 2, ll + n + 1])
    ixf, iyf = ix.ravel(), iy.ravel()
    boundary = (ixf == 0) | (ixf == n) | (iyf == 0) | (iyf == n)
    for arr in (coords, cells, boundary):
        arr.setflags(write=False)
    return FineMesh(n, cells, coords, boundary)


# ---------------------------------------------------------------------------
# cell fields


def contrast(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ConfigError("cell field must be finite and strictly positive")
    return float(values.max() / values.min())


def read_kappa_file(path: Union[str, Path], n: int | None = None) -> np.ndarray:
    """Read a cell field: first line ``nx ny``, then nx*ny positive floats, row-major."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read cell field {path}: {exc}") from exc
    lines = text.strip().splitlines()
    if not lines:
        raise LoadError(f"{path}: empty file")
    try:
        nx, ny = (int(t) for t in lines[0].split())
        values = np.array(" ".join(lines[1:]).split(), dtype=float)
    except ValueError as exc:
        raise LoadError(f"{path}: malformed cell field ({exc})") from exc
    if values.size != nx * ny:
        raise LoadError(f"{path}: header says {nx}x{ny} but found {values.size} values")
    if n is not None and (nx != n or ny != n):
        raise LoadError(f"{path}: field is {nx}x{ny}, mesh has {n}x{n} cells")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise LoadError(f"{path}: values must be finite and positive")
    return values


def write_kappa_file(path: Union[str, Path], values: np.ndarray, n: int) -> None:
    values = np.asarray(values, dtype=float).reshape(n, n)
    rows = "\n".join(" ".join(repr(float(v)) for v in row) for row in values)
    Path(path).write_text(f"{n} {n}\n{rows}\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# element matrices and assembly

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


def _shape(x, y):
    sx, sy = _CORNERS[:, 0], _CORNERS[:, 1]
    fx = np.where(sx == 1, x, 1 - x)
    fy = np.where(sy == 1, y, 1 - y)
    val = fx * fy
    dx = np.where(sx == 1, 1.0, -1.0) * fy
    dy = np.where(sy == 1, 1.0, -1.0) * fx
    return val, np.column_stack([dx, dy])


def element_matrices() -> tuple[np.ndarray, np.ndarray]:
    """Q1 stiffness and unit-area mass on a square cell (2x2 Gauss).

    In 2D the stiffness of a square cell does not depend on its size; the mass
    scales with h**2.
    """
    K = np.zeros((4, 4))
    Mm = np.zeros((4, 4))
    for x in _GAUSS:
        for y in _GAUSS:
            val, grad = _shape(x, y)
            K += 0.25 * grad @ grad.T
            Mm += 0.25 * np.outer(val, val)
    return K, Mm


_KE, _ME = element_matrices()


def assemble(mesh: FineMesh, coeff=None, mode: str = "stiffness", cells=None) -> sp.csr_matrix:
    """Assemble a global Q1 matrix over ``cells`` (all cells by default).

    ``mode`` is ``"stiffness"`` (int coeff grad u . grad v), ``"mass"``
    (int u v; ``coeff`` ignored) or ``"weighted_mass"`` (int coeff u v).
    Dirichlet rows are kept.
    """
    ncell = mesh.cell_count
    if mode == "mass":
        coeff = np.ones(ncell)
    if coeff is None:
        raise AssemblyError(f"mode {mode!r} needs a cell coefficient")
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape != (ncell,):
        raise AssemblyError(f"coefficient has shape {coeff.shape}, mesh has {ncell} cells")
    if mode == "stiffness":
        ke = _KE
    elif mode in ("mass", "weighted_mass"):
        ke = _ME * mesh.h**2
    else:
        raise AssemblyError(f"unknown assembly mode {mode!r}")
    cells = np.arange(ncell) if cells is None else np.asarray(cells)
    conn = mesh.cells[cells]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    data = (coeff[cells][:, None] * ke.ravel()[None, :]).ravel()
    nn = mesh.node_count
    return sp.coo_matrix((data, (rows, cols)), shape=(nn, nn)).tocsr()


def local_matrix(mesh: FineMesh, coeff, mode: str, cells, nodes) -> np.ndarray:
    """Dense matrix over ``nodes`` assembled from ``cells`` only.

    Entries touching nodes outside ``nodes`` (e.g. Dirichlet nodes) are
    dropped. Nodes of ``cells`` on the rim of the patch keep only the
    contributions from inside it, which gives natural boundary conditions.
    """
    nodes = np.asarray(nodes)
    cells = np.asarray(cells)
    if mode == "stiffness":
        ke = _KE
    elif mode in ("mass", "weighted_mass"):
        ke = _ME * mesh.h**2
    else:
        raise AssemblyError(f"unknown assembly mode {mode!r}")
    w = np.ones(cells.size) if mode == "mass" else np.asarray(coeff, dtype=float)[cells]
    conn = mesh.cells[cells]
    pos = np.searchsorted(nodes, conn)
    pos = np.minimum(pos, nodes.size - 1)
    inside = nodes[pos] == conn
    out = np.zeros((nodes.size, nodes.size))
    for a in range(4):
        for b in range(4):
            keep = inside[:, a] & inside[:, b]
            np.add.at(out, (pos[keep, a], pos[keep, b]), w[keep] * ke[a, b])
    return out


@dataclass(eq=False)
class FineSystem:
    """Mesh plus the assembled stiffness ``A`` and mass ``M`` (all nodes)."""

    mesh: FineMesh
    kappa: np.ndarray
    A: sp.csr_matrix
    M: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def free(self) -> np.ndarray:
        return self.mesh.free

    @property
    def A_free(self) -> sp.csc_matrix:
        if "A" not in self._cache:
            f = self.free
            self._cache["A"] = self.A[f][:, f].tocsc()
        return self._cache["A"]

    @property
    def M_free(self) -> sp.csc_matrix:
        if "M" not in self._cache:
            f = self.free
            self._cache["M"] = self.M[f][:, f].tocsc()
        return self._cache["M"]

    def extend(self, v_free: np.ndarray) -> np.ndarray:
        v_free = np.asarray(v_free)
        out = np.zeros((self.mesh.node_count,) + v_free.shape[1:], dtype=float)
        out[self.free] = v_free
        return out


def build_system(mesh: FineMesh, kappa) -> FineSystem:
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != (mesh.cell_count,):
        raise AssemblyError(f"kappa has shape {kappa.shape}, mesh has {mesh.cell_count} cells")
    contrast(kappa)
    return FineSystem(mesh, kappa, assemble(mesh, kappa, "stiffness"), assemble(mesh, None, "mass"))


# ---------------------------------------------------------------------------
# loads


@dataclass(frozen=True)
class ConstantSource:
    value: float = 1.0


@dataclass(frozen=True)
class PointSource:
    node: int
    strength: float = 1.0


@dataclass(frozen=True, eq=False)
class GridSource:
    values: np.ndarray  # one value per fine cell


Source = Union[ConstantSource, PointSource, GridSource]


def assemble_load(mesh: FineMesh, source: Source) -> np.ndarray:
    """Load vector F_i = int f phi_i over all nodes (boundary entries zeroed).

    A point source is a discrete delta: ``strength`` at one node, zero elsewhere.
    """
    nn = mesh.node_count
    if isinstance(source, ConstantSource):
        F = assemble(mesh, None, "mass") @ np.full(nn, float(source.value))
    elif isinstance(source, PointSource):
        k = int(source.node)
        if not 0 <= k < nn or mesh.boundary[k]:
            raise ConfigError(f"point source node {k} is not an interior node")
        F = np.zeros(nn)
        F[k] = source.strength
    elif isinstance(source, GridSource):
        vals = np.asarray(source.values, dtype=float)
        if vals.shape != (mesh.cell_count,):
            raise ConfigError(f"grid source has {vals.size} values, mesh has {mesh.cell_count} cells")
        F = np.zeros(nn)
        np.add.at(F, mesh.cells.ravel(), np.repeat(vals * mesh.h**2 / 4.0, 4))
    else:
        raise ConfigError(f"unknown source specification {source!r}")
    F[mesh.boundary] = 0.0
    return F


# ---------------------------------------------------------------------------
# linear algebra

DENSE_LIMIT = 2000


def _pcg(op, rhs, tol, maxiter):
    diag = op.diagonal()
    if np.any(diag <= 0):
        raise SolverError("operator has a non-positive diagonal entry; not SPD")
    inv_d = 1.0 / diag
    bnorm = np.linalg.norm(rhs)
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            break
        q = op @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        z = inv_d * r
        rz, rz_old = r @ z, rz
        p = z + (rz / rz_old) * p
    # recompute: the recursive residual drifts on ill-conditioned systems
    res = np.linalg.norm(rhs - op @ x)
    if res > tol * bnorm:
        raise SolverError(f"PCG did not reach rtol={tol:g} in {maxiter} iterations", residual=res / bnorm)
    return x


def solve_spd(op, rhs, tol: float = 1e-10, maxiter: int | None = None, method: str = "auto") -> np.ndarray:
    """Solve an SPD system to relative residual ``tol``.

    With ``method="auto"``, systems below ``DENSE_LIMIT`` unknowns use a dense
    Cholesky factorization with iterative refinement and larger ones use
    Jacobi-preconditioned CG with an iteration cap of ``10 * dofs``.
    ``method="direct"`` uses a sparse LU with refinement instead of CG; at
    high contrast the attainable residual is about ``eps * |A| * |x|``, which
    can exceed 1e-10 of ``|rhs|``.
    """
    if not 0 < tol <= 1e-6:
        raise ValueError(f"tol must lie in (0, 1e-6], got {tol}")
    if method not in ("auto", "direct", "cg"):
        raise ValueError(f"unknown solver method {method!r}")
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if n == 0 or not np.any(rhs):
        return np.zeros_like(rhs)
    bnorm = np.linalg.norm(rhs)
    if method == "direct" and sp.issparse(op):
        op = sp.csc_matrix(op)
        try:
            lu = spla.splu(op)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        x = lu.solve(rhs)
        for _ in range(3):
            r = rhs - op @ x
            if np.linalg.norm(r) <= tol * bnorm:
                return x
            x = x + lu.solve(r)
        res = np.linalg.norm(rhs - op @ x)
        if res > tol * bnorm:
            raise SolverError("sparse LU with refinement missed the tolerance", residual=res / bnorm)
        return x
    if n < DENSE_LIMIT and method != "cg":
        dense = op.toarray() if sp.issparse(op) else np.asarray(op, dtype=float)
        try:
            fac = sla.cho_factor(dense)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Cholesky failed: {exc}") from exc
        x = sla.cho_solve(fac, rhs)
        for _ in range(3):
            r = rhs - dense @ x
            if np.linalg.norm(r) <= tol * bnorm:
                return x
            x = x + sla.cho_solve(fac, r)
        res = np.linalg.norm(rhs - dense @ x)
        if res > tol * bnorm:
            raise SolverError("dense Cholesky with refinement missed the tolerance", residual=res / bnorm)
        return x
    op = sp.csr_matrix(op)
    return _pcg(op, rhs, tol, maxiter or 10 * n)


def quadratic_form(u: np.ndarray, op) -> float:
    q = float(u @ (op @ u))
    scale = float(np.abs(u) @ (abs(op) @ np.abs(u))) if sp.issparse(op) else float(np.abs(u) @ np.abs(op) @ np.abs(u))
    if q < -1e-12 * max(scale, 1.0):
        raise SymmetryError(f"quadratic form is negative ({q:g}); operator not semidefinite")
    return max(q, 0.0)


def norm(u: np.ndarray, which: str, system: FineSystem) -> float:
    """L2 (``"mass"``) or energy (``"energy"``) norm of a full-length dof vector."""
    u = np.asarray(u, dtype=float)
    if u.shape != (system.mesh.node_count,):
        raise ValueError(f"vector length {u.shape} does not match {system.mesh.node_count} nodes")
    if which == "mass":
        op = system.M
    elif which == "energy":
        op = system.A
    else:
        raise ValueError(f"unknown norm {which!r}")
    return float(np.sqrt(quadratic_form(u, op)))


# ---------------------------------------------------------------------------
# fine-grid time stepping

Forcing = Union[None, np.ndarray, Callable[[float], np.ndarray]]


def as_forcing(F: Forcing, size: int) -> Callable[[float], np.ndarray]:
    if F is None:
        zero = np.zeros(size)
        return lambda t: zero
    if callable(F):
        return F
    F = np.asarray(F, dtype=float)
    if F.shape != (size,):
        raise ValueError(f"forcing has shape {F.shape}, expected ({size},)")
    return lambda t: F


@dataclass
class Trajectory:
    """Time series of a run; ``states`` holds every ``stride``-th state."""

    tau: float
    times: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    monitor: list = field(default_factory=list)
    states: list = field(default_factory=list)
    stride: int = 1
    blowup: bool = False
    blowup_step: int | None = None
    final_state: object = None

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def record(self, t, l2, energy, state=None, monitor=float("nan")):
        k = len(self.times)
        self.times.append(float(t))
        self.l2.append(float(l2))
        self.energy.append(float(energy))
        self.monitor.append(float(monitor))
        if state is not None and k % self.stride == 0:
            self.states.append(np.array(state, copy=True))

    def to_csv(self, path) -> None:
        rows = ["step,time,l2_norm,energy_norm,monitor_E,blowup_flag"]
        for k, t in enumerate(self.times):
            flag = int(self.blowup and self.blowup_step is not None and k >= self.blowup_step)
            rows.append(f"{k},{t!r},{self.l2[k]!r},{self.energy[k]!r},{self.monitor[k]!r},{flag}")
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def _norms(u, system):
    return np.sqrt(max(u @ (system.M @ u), 0.0)), np.sqrt(max(u @ (system.A @ u), 0.0))


def reference_solve(system: FineSystem, F: Forcing, u0, tau: float, N: int, stride: int = 1) -> Trajectory:
    """Backward Euler on the full fine space: (M + tau A) u^{n+1} = M u^n + tau F^{n+1}.

    The free-dof block of ``M + tau A`` is factorized once (sparse LU).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    nn = system.mesh.node_count
    force = as_forcing(F, nn)
    f = system.free
    u = np.zeros(nn) if u0 is None else np.array(u0, dtype=float)
    u[system.mesh.boundary] = 0.0
    lu = spla.splu((system.M_free + tau * system.A_free).tocsc())
    Mf = system.M_free
    traj = Trajectory(tau=tau, stride=stride)
    traj.record(0.0, *_norms(u, system), state=u)
    for k in range(N):
        t = (k + 1) * tau
        rhs = Mf @ u[f] + tau * force(t)[f]
        u = np.zeros(nn)
        u[f] = lu.solve(rhs)
        traj.record(t, *_norms(u, system), state=u)
    return traj


def forward_euler_solve(system: FineSystem, F: Forcing, u0, tau: float, N: int, stride: int = 1,
                        threshold: float = 1e6) -> Trajectory:
    """Forward Euler: M u^{n+1} = M u^n - tau (A u^n - F^n).

    Stops and sets ``blowup`` once the L2 norm exceeds ``threshold * max(|u0|, 1)``
    or turns non-finite; instability is reported, not raised.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    nn = system.mesh.node_count
    force = as_forcing(F, nn)
    f = system.free
    u = np.zeros(nn) if u0 is None else np.array(u0, dtype=float)
    u[system.mesh.boundary] = 0.0
    lu = spla.splu(system.M_free.tocsc())
    Af = system.A_free
    traj = Trajectory(tau=tau, stride=stride)
    l2, en = _norms(u, system)
    limit = threshold * max(l2, 1.0)
    traj.record(0.0, l2, en, state=u)
    for k in range(N):
        t = k * tau
        uf = u[f] + lu.solve(-tau * (Af @ u[f] - force(t)[f]))
        u = np.zeros(nn)
        u[f] = uf
        l2, en = _norms(u, system) if np.all(np.isfinite(uf)) else (np.inf, np.inf)
        traj.record(t + tau, l2, en, state=u)
        if not np.isfinite(l2) or l2 > limit:
            traj.blowup, traj.blowup_step = True, k + 1
            break
    return traj


def power_iteration_lambda_max(system: FineSystem, iters: int = 2000, tol: float = 1e-12, seed: int = 0) -> float:
    """Largest eigenvalue of M^{-1} A on free dofs by power iteration with Rayleigh quotients."""
    rng = np.random.default_rng(seed)
    Af, Mf = system.A_free, system.M_free
    lu = spla.splu(Mf.tocsc())
    x = rng.standard_normal(Af.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = lu.solve(Af @ x)
        y /= np.sqrt(y @ (Mf @ y))
        new = (y @ (Af @ y)) / (y @ (Mf @ y))
        x = y
        if abs(new - lam) <= tol * abs(new):
            return float(new)
        lam = new
    return float(lam)
