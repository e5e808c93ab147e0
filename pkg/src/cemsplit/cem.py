"""Constraint energy minimizing (CEM) multiscale space.

Per coarse element a local spectral problem (kappa-stiffness against the
kappa-tilde weighted mass, natural conditions on the element rim) yields the
auxiliary functions psi. They live on one element each and are discontinuous
across element rims, so they are stored as local coefficient vectors rather
than global dof vectors. The basis functions are energy minimizers subject
to matching the s-projection onto the auxiliary space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coarse import CoarseDecomposition, pou_gradient_sum
from .errors import BasisError, ConditioningError, ConfigError, SpectralError
from .fem import FineSystem, local_matrix

KAPPA_TILDE_MODES = ("H-2", "pou")


def kappa_tilde(system: FineSystem, decomp: CoarseDecomposition, mode: str = "H-2") -> np.ndarray:
    """Cell weight of the s-form: kappa / H^2, or kappa * sum |grad chi|^2."""
    if mode == "H-2":
        return system.kappa / decomp.H**2
    if mode == "pou":
        return system.kappa * pou_gradient_sum(decomp)
    raise ConfigError(f"unknown kappa_tilde mode {mode!r}; expected one of {KAPPA_TILDE_MODES}")


def fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so that each one's largest-magnitude entry is positive."""
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


@dataclass(eq=False)
class LocalFunctions:
    """Functions living on single coarse elements, stored element by element.

    ``vectors[i]`` has one row per entry of ``nodes[i]`` and one column per
    function; ``weights[i]`` is the dense Gram operator that defines the
    pairing used for constraints (s_i for the CEM auxiliary space, the L2
    mass on K_i for the second complementary space).
    """

    system: FineSystem
    decomp: CoarseDecomposition
    nodes: list
    vectors: list
    eigenvalues: list
    weights: list
    next_eigenvalues: np.ndarray = None  # first discarded eigenvalue per element (nan if none)
    shortfall: dict = field(default_factory=dict)

    @property
    def counts(self) -> np.ndarray:
        return np.array([v.shape[1] for v in self.vectors], dtype=int)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    @cached_property
    def owner(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.vectors)), self.counts)

    def rows_of(self, elements) -> np.ndarray:
        elements = np.atleast_1d(elements)
        return np.concatenate([np.arange(self.offsets[e], self.offsets[e + 1]) for e in elements])

    @cached_property
    def constraint(self) -> sp.csr_matrix:
        """Sparse (size x node_count) matrix; row k applied to v gives the pairing of v with function k."""
        rows, cols, data = [], [], []
        for i, (nodes, vec, w) in enumerate(zip(self.nodes, self.vectors, self.weights)):
            block = vec.T @ w
            r = self.offsets[i] + np.arange(vec.shape[1])
            rr, cc = np.meshgrid(r, nodes, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            data.append(block.ravel())
        nn = self.system.mesh.node_count
        if not rows:
            return sp.csr_matrix((0, nn))
        return sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(self.size, nn)
        ).tocsr()

    def pair(self, v: np.ndarray) -> np.ndarray:
        """Pairings of a global dof vector (or columns of one) with every function."""
        return self.constraint @ v

    def embed(self, k: int) -> np.ndarray:
        """Global nodal vector of function ``k`` (only meaningful inside its element)."""
        i = self.owner[k]
        out = np.zeros(self.system.mesh.node_count)
        out[self.nodes[i]] = self.vectors[i][:, k - self.offsets[i]]
        return out


# auxiliary space and projection -------------------------------------------


@dataclass(eq=False)
class AuxSpace(LocalFunctions):
    mode: str = "H-2"


def solve_aux_spectral(system: FineSystem, decomp: CoarseDecomposition, L: int = 3, mode: str = "H-2") -> AuxSpace:
    """First ``L`` eigenpairs per element of a(psi, v) = lambda s_i(psi, v), s_i-orthonormal."""
    if L < 1:
        raise ConfigError("need at least one auxiliary function per element")
    ktil = kappa_tilde(system, decomp, mode)
    mesh = system.mesh
    nodes_l, vecs_l, vals_l, w_l, nxt = [], [], [], [], []
    for i in range(decomp.n_elements):
        K = decomp.element(i)
        nodes = K.nodes[~mesh.boundary[K.nodes]]
        if L > nodes.size:
            raise ConfigError(f"L={L} exceeds the {nodes.size} free dofs of element {i}")
        A = local_matrix(mesh, system.kappa, "stiffness", K.cells, nodes)
        S = local_matrix(mesh, ktil, "weighted_mass", K.cells, nodes)
        try:
            lam, vec = sla.eigh(A, S)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SpectralError(f"local eigenproblem failed on element {i}: {exc}") from exc
        nodes_l.append(nodes)
        vecs_l.append(fix_signs(vec[:, :L]))
        vals_l.append(lam[:L])
        w_l.append(S)
        nxt.append(lam[L] if lam.size > L else np.nan)
    return AuxSpace(system, decomp, nodes_l, vecs_l, vals_l, w_l, np.array(nxt), mode=mode)


def project_aux(v, aux: LocalFunctions) -> list:
    """Projection onto the auxiliary space, returned element by element.

    ``v`` is either a global dof vector or an element-wise field (a list of
    local vectors on ``aux.nodes``), so the projection can be re-applied to
    its own output.
    """
    if isinstance(v, list):
        coeffs = [vec.T @ (w @ f) for vec, w, f in zip(aux.vectors, aux.weights, v)]
    else:
        c = aux.pair(np.asarray(v, dtype=float))
        coeffs = [c[aux.offsets[i]:aux.offsets[i + 1]] for i in range(len(aux.vectors))]
    return [vec @ c for vec, c in zip(aux.vectors, coeffs)]


def local_field(v: np.ndarray, aux: LocalFunctions) -> list:
    """Restrict a global dof vector to each element's node list."""
    return [np.asarray(v)[nodes] for nodes in aux.nodes]


def field_norm(f: list, aux: LocalFunctions) -> float:
    """Norm induced by the element weights (the s-norm for an AuxSpace)."""
    return float(np.sqrt(sum(x @ (w @ x) for x, w in zip(f, aux.weights))))


# subspace bases -----------------------------------------------------------


@dataclass(eq=False)
class SubspaceBasis:
    """Columns spanning a multiscale subspace, as global dof vectors.

    ``origin[k] = (entity, index, eigenvalue)`` names the coarse element or
    coarse node a column belongs to; ``groups`` carries a color per column
    when the space is split into disjoint-support families.
    """

    vectors: np.ndarray
    tag: str
    origin: list = field(default_factory=list)
    groups: np.ndarray | None = None
    multipliers: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def gram(self, op) -> np.ndarray:
        return self.vectors.T @ (op @ self.vectors)

    def part(self, group: int) -> "SubspaceBasis":
        if self.groups is None:
            raise ValueError(f"basis {self.tag} carries no group labels")
        sel = np.flatnonzero(self.groups == group)
        return SubspaceBasis(self.vectors[:, sel], f"{self.tag}[{group}]", [self.origin[k] for k in sel], self.groups[sel])

    def parts(self) -> list:
        return [self.part(g) for g in np.unique(self.groups)]


def check_conditioning(basis: SubspaceBasis, M, limit: float = 1e12) -> float:
    G = basis.gram(M)
    ev = np.linalg.eigvalsh(0.5 * (G + G.T))
    if ev.size == 0:
        return 1.0
    if ev[0] <= 0 or ev[-1] / ev[0] > limit:
        raise ConditioningError(f"{basis.tag}: mass Gram condition number exceeds {limit:g}")
    return float(ev[-1] / ev[0])


def save_basis(basis: SubspaceBasis, path) -> None:
    """Text dump: comment header (tag, counts, origins) then one row per fine node."""
    lines = [f"# tag {basis.tag}", f"# shape {basis.vectors.shape[0]} {basis.dim}"]
    lines += [f"# origin {e} {j} {lam!r}" for e, j, lam in basis.origin]
    if basis.groups is not None:
        lines.append("# groups " + " ".join(str(int(g)) for g in basis.groups))
    body = "\n".join(" ".join(repr(float(x)) for x in row) for row in basis.vectors)
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n", encoding="utf-8")


def load_basis(path) -> SubspaceBasis:
    tag, shape, origin, groups, rows = None, None, [], None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# tag "):
            tag = line[6:]
        elif line.startswith("# shape "):
            shape = tuple(int(t) for t in line.split()[2:])
        elif line.startswith("# origin "):
            _, _, e, j, lam = line.split()
            origin.append((int(e), int(j), float(lam)))
        elif line.startswith("# groups"):
            groups = np.array(line.split()[2:], dtype=int)
        elif line.strip():
            rows.append([float(x) for x in line.split()])
    vectors = np.array(rows, dtype=float).reshape(shape)
    return SubspaceBasis(vectors, tag, origin, groups)


# energy minimizing solves -------------------------------------------------


def saddle_solve(A_DD, C_D, rhs_c: np.ndarray, label: str = ""):
    """Solve [[A, C^T], [C, 0]] [x; mu] = [0; rhs_c] for several right-hand sides."""
    nd, nc = A_DD.shape[0], C_D.shape[0]
    K = sp.bmat([[A_DD, C_D.T], [C_D, None]], format="csc")
    rhs = np.zeros((nd + nc,) + rhs_c.shape[1:])
    rhs[nd:] = rhs_c
    try:
        sol = spla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise BasisError(f"singular saddle-point system {label}: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise BasisError(f"non-finite saddle-point solution {label}")
    return sol[:nd], sol[nd:]


def _constraint_block(C: sp.csr_matrix, rows, dofs) -> sp.csr_matrix:
    return C[rows][:, dofs]


def build_cem_basis(system: FineSystem, decomp: CoarseDecomposition, aux: AuxSpace,
                    layers: int | None = None) -> SubspaceBasis:
    """Localized CEM basis: one energy minimizer per auxiliary function, on K_i^+."""
    ell = decomp.layers if layers is None else layers
    if ell < 1:
        raise ConfigError("localized CEM basis needs at least one oversampling layer")
    A, C = system.A.tocsr(), aux.constraint
    cols = np.zeros((system.mesh.node_count, aux.size))
    origin = []
    for i in range(decomp.n_elements):
        region = decomp.oversampled(i, ell)
        D = region.interior
        rows = aux.rows_of(region.elements)
        own = aux.rows_of(i)
        rhs = (rows[:, None] == own[None, :]).astype(float)
        phi, _ = saddle_solve(A[D][:, D], _constraint_block(C, rows, D), rhs, label=f"(element {i})")
        cols[np.ix_(D, own)] = phi
        origin += [(i, j, float(lam)) for j, lam in enumerate(aux.eigenvalues[i])]
    return SubspaceBasis(cols, "V1_cem", origin)


def build_global_cem_basis(system: FineSystem, aux: AuxSpace) -> SubspaceBasis:
    """Global CEM basis: minimize a(v, v) over all of V subject to matching one aux function."""
    D = system.free
    rhs = np.eye(aux.size)
    phi, mu = saddle_solve(system.A_free, aux.constraint[:, D], rhs, label="(global CEM)")
    cols = system.extend(phi)
    origin = [(int(aux.owner[k]), int(k - aux.offsets[aux.owner[k]]), float(aux.eigenvalues[aux.owner[k]][k - aux.offsets[aux.owner[k]]]))
              for k in range(aux.size)]
    return SubspaceBasis(cols, "V1_glo", origin, multipliers=mu)
