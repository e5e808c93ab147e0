"""Complementary space V_{H,2} (two constructions) and the stability constants.

Both constructions live in the kernel of the auxiliary projection. The
kernel constraint is imposed on each local problem through an orthonormal
nullspace basis of the local constraint matrix (dense SVD).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cem import AuxSpace, LocalFunctions, SubspaceBasis, fix_signs, saddle_solve
from .coarse import CoarseDecomposition
from .errors import ConditioningError, ConfigError, ConstructionError, InfeasibleSplitError, SpectralError
from .fem import FineSystem, local_matrix


class SubspaceOverlapWarning(UserWarning):
    """Two subspaces share a direction; the strengthened Cauchy-Schwarz constant is 1."""


def _nullspace(C: np.ndarray, label: str) -> np.ndarray:
    if C.shape[0] == 0:
        return np.eye(C.shape[1])
    Z = sla.null_space(C)
    rank = C.shape[1] - Z.shape[1]
    if rank < C.shape[0]:
        raise ConstructionError(f"constraint matrix of {label} is rank deficient ({rank} < {C.shape[0]})")
    return Z


def _constrained_eigs(A: np.ndarray, B: np.ndarray, Z: np.ndarray, label: str):
    try:
        lam, X = sla.eigh(Z.T @ A @ Z, Z.T @ B @ Z)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"constrained eigenproblem failed on {label}: {exc}") from exc
    return lam, Z @ X


def build_v2_first(system: FineSystem, decomp: CoarseDecomposition, aux: AuxSpace, J: int = 3) -> SubspaceBasis:
    """Per coarse neighborhood, the ``J`` lowest modes of kappa-stiffness vs H^-2 mass in V_0(omega) and ker(Pi).

    Eigenvectors are a-normalized. ``info["tails"]`` holds the first discarded
    eigenvalue per neighborhood, ``info["shortfall"]`` neighborhoods that had
    fewer than ``J`` admissible modes.
    """
    if J < 1:
        raise ConfigError("J must be >= 1")
    A, M, C = system.A.tocsr(), system.M.tocsr(), aux.constraint
    H2 = decomp.H**2
    cols, origin, groups, tails, shortfall = [], [], [], [], {}
    for p, color in zip(decomp.interior_coarse_nodes, decomp.colors):
        omega = decomp.neighborhood(p)
        D = omega.interior
        Cd = C[aux.rows_of(omega.elements)][:, D].toarray()
        Z = _nullspace(Cd, f"neighborhood {p}")
        lam, X = _constrained_eigs(A[D][:, D].toarray(), M[D][:, D].toarray() / H2, Z, f"neighborhood {p}")
        k = min(J, lam.size)
        if k < J:
            shortfall[int(p)] = J - k
        X = fix_signs(X[:, :k])
        X /= np.sqrt(np.einsum("ij,ij->j", X, A[D][:, D] @ X))
        full = np.zeros((system.mesh.node_count, k))
        full[D] = X
        cols.append(full)
        origin += [(int(p), j, float(lam[j])) for j in range(k)]
        groups += [int(color)] * k
        tails.append(lam[k] if lam.size > k else np.nan)
    vectors = np.hstack(cols) if cols else np.zeros((system.mesh.node_count, 0))
    return SubspaceBasis(vectors, "V2_first", origin, np.array(groups, dtype=int),
                         info={"tails": np.array(tails), "shortfall": shortfall})


def solve_aux2_spectral(system: FineSystem, decomp: CoarseDecomposition, aux: AuxSpace, J: int = 3) -> LocalFunctions:
    """Per element, the ``J`` lowest modes of kappa-stiffness vs L2 mass in V(K_i) and ker(Pi); L2-orthonormal."""
    if J < 1:
        raise ConfigError("J must be >= 1")
    mesh = system.mesh
    nodes_l, vecs_l, vals_l, w_l, nxt, shortfall = [], [], [], [], [], {}
    for i in range(decomp.n_elements):
        K = decomp.element(i)
        nodes = aux.nodes[i]
        A = local_matrix(mesh, system.kappa, "stiffness", K.cells, nodes)
        Mi = local_matrix(mesh, None, "mass", K.cells, nodes)
        Cd = aux.vectors[i].T @ aux.weights[i]
        Z = _nullspace(Cd, f"element {i}")
        lam, X = _constrained_eigs(A, Mi, Z, f"element {i}")
        k = min(J, lam.size)
        if k < J:
            shortfall[i] = J - k
        nodes_l.append(nodes)
        vecs_l.append(fix_signs(X[:, :k]))
        vals_l.append(lam[:k])
        w_l.append(Mi)
        nxt.append(lam[k] if lam.size > k else np.nan)
    return LocalFunctions(system, decomp, nodes_l, vecs_l, vals_l, w_l, np.array(nxt), shortfall)


def build_v2_second(system: FineSystem, decomp: CoarseDecomposition, aux: AuxSpace, J: int = 3,
                    layers: int | None = None, variant: str = "localized") -> SubspaceBasis:
    """Energy minimizers in ker(Pi) whose L2 pairing with the second auxiliary space hits one mode.

    ``variant="global"`` solves on the whole domain; ``"localized"`` on the
    oversampled element K_i^+. Columns are grouped by element parity color.
    """
    if variant not in ("global", "localized"):
        raise ConfigError(f"unknown variant {variant!r}")
    aux2 = solve_aux2_spectral(system, decomp, aux, J)
    C = sp.vstack([aux.constraint, aux2.constraint]).tocsr()
    n1 = aux.size
    nn = system.mesh.node_count
    cols = np.zeros((nn, aux2.size))
    if variant == "global":
        D = system.free
        rhs = np.vstack([np.zeros((n1, aux2.size)), np.eye(aux2.size)])
        zeta, _ = saddle_solve(system.A_free, C[:, D], rhs, label="(global second choice)")
        cols[D] = zeta
        tag = "V2_second_glo"
    else:
        ell = decomp.layers if layers is None else layers
        if ell < 1:
            raise ConfigError("localized construction needs at least one oversampling layer")
        A = system.A.tocsr()
        for i in range(decomp.n_elements):
            region = decomp.oversampled(i, ell)
            D = region.interior
            rows = np.concatenate([aux.rows_of(region.elements), n1 + aux2.rows_of(region.elements)])
            own = n1 + aux2.rows_of(i)
            rhs = (rows[:, None] == own[None, :]).astype(float)
            zeta, _ = saddle_solve(A[D][:, D], C[rows][:, D], rhs, label=f"(element {i})")
            cols[np.ix_(D, own - n1)] = zeta
        tag = "V2_second"
    origin = [(int(aux2.owner[k]), int(k - aux2.offsets[aux2.owner[k]]),
               float(aux2.eigenvalues[aux2.owner[k]][k - aux2.offsets[aux2.owner[k]]])) for k in range(aux2.size)]
    groups = decomp.element_colors[aux2.owner]
    return SubspaceBasis(cols, tag, origin, groups,
                         info={"aux2": aux2, "tails": aux2.next_eigenvalues, "shortfall": aux2.shortfall})


# constants ----------------------------------------------------------------


def _cols(V) -> np.ndarray:
    return V.vectors if isinstance(V, SubspaceBasis) else np.asarray(V, dtype=float).reshape(np.shape(V)[0], -1)


def _chol(G: np.ndarray, label: str, limit: float = 1e12) -> np.ndarray:
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0 or ev[-1] / ev[0] > limit:
        raise ConditioningError(f"{label}: Gram matrix is singular or has condition number > {limit:g}")
    return np.linalg.cholesky(G)


def subspace_cosine(G1: np.ndarray, B: np.ndarray, G2: np.ndarray) -> float:
    """Largest cosine between two spans given their Grams and cross Gram B = V1^T M V2."""
    if B.size == 0:
        return 0.0
    L1 = _chol(G1, "first space")
    L2 = _chol(G2, "second space")
    X = sla.solve_triangular(L1, B, lower=True)
    X = sla.solve_triangular(L2, X.T, lower=True)
    g = float(np.linalg.norm(X, 2))
    if g >= 1.0 - 1e-8:
        warnings.warn(f"subspaces intersect (cosine {g:.12f}); the split is not a direct sum",
                      SubspaceOverlapWarning, stacklevel=3)
    return min(g, 1.0)


def compute_gamma(V1, V2, M) -> float:
    """sup (v1, v2) / (|v1| |v2|) over the two spans in the M inner product."""
    X1, X2 = _cols(V1), _cols(V2)
    if X1.shape[1] == 0 or X2.shape[1] == 0:
        return 0.0
    MX2 = M @ X2
    return subspace_cosine(X1.T @ (M @ X1), X1.T @ MX2, X2.T @ MX2)


def compute_beta(parts, M) -> float:
    """Largest pairwise cosine between the colored parts of a space."""
    parts = [p for p in parts if _cols(p).shape[1] > 0]
    if len(parts) < 2:
        raise ConfigError("beta needs at least two nonempty parts")
    return max(compute_gamma(parts[a], parts[b], M) for a in range(len(parts)) for b in range(a + 1, len(parts)))


def compute_supG(V, A, M, H: float) -> float:
    """max over the span of |v|_a^2 / (H^-2 |v|^2)."""
    X = _cols(V)
    if X.shape[1] == 0:
        raise ConfigError("sup G of an empty space")
    Ga = X.T @ (A @ X)
    Gm = X.T @ (M @ X) / H**2
    L = _chol(Gm, "mass Gram")
    W = sla.solve_triangular(L, sla.solve_triangular(L, 0.5 * (Ga + Ga.T), lower=True).T, lower=True)
    return float(np.linalg.eigvalsh(0.5 * (W + W.T))[-1])


@dataclass
class ConstantsReport:
    gamma: float
    beta: float
    supG_V1: float
    supG_V2: float
    supG_per_color: list
    H: float
    tails: np.ndarray = field(default_factory=lambda: np.array([]))
    contrast: float = float("nan")
    omega: float = 1.0
    tau_thm32: float = float("nan")
    tau_thm33: float = float("nan")
    shortfall: dict = field(default_factory=dict)

    @property
    def colors(self) -> int:
        return len(self.supG_per_color)


def recommend_tau(report: ConstantsReport, omega: float | None = None, H: float | None = None,
                  mode: str = "thm32") -> float:
    """Largest time step allowed by the global (``thm32``) or per-color (``thm33``) stability condition."""
    omega = report.omega if omega is None else omega
    H = report.H if H is None else H
    if not 0.0 <= omega <= 1.0:
        raise ConfigError(f"omega must lie in [0, 1], got {omega}")
    if report.gamma >= 1.0:
        raise InfeasibleSplitError(f"gamma = {report.gamma} >= 1: V1 and V2 are not a direct sum")
    base = (1.0 - report.gamma**2) / ((2.0 - omega) * H**-2)
    if mode == "thm32":
        return base / report.supG_V2
    if mode == "thm33":
        J = report.colors
        if J < 1:
            raise ConfigError("per-color stability needs colored parts")
        ell = math.ceil(math.log2(J)) if J > 1 else 0
        return base * (1.0 - report.beta**2) ** ell / (J**2 * max(report.supG_per_color))
    raise ConfigError(f"unknown stability mode {mode!r}")


def compute_constants(system: FineSystem, decomp: CoarseDecomposition, V1: SubspaceBasis, V2: SubspaceBasis,
                      omega: float = 1.0) -> ConstantsReport:
    A, M, H = system.A, system.M, decomp.H
    parts = V2.parts() if V2.groups is not None else [V2]
    report = ConstantsReport(
        gamma=compute_gamma(V1, V2, M),
        beta=compute_beta(parts, M) if len(parts) > 1 else 0.0,
        supG_V1=compute_supG(V1, A, M, H),
        supG_V2=compute_supG(V2, A, M, H),
        supG_per_color=[compute_supG(p, A, M, H) for p in parts],
        H=H,
        tails=np.asarray(V2.info.get("tails", [])),
        contrast=float(system.kappa.max() / system.kappa.min()),
        omega=omega,
        shortfall=dict(V2.info.get("shortfall", {})),
    )
    report.tau_thm32 = recommend_tau(report, mode="thm32")
    report.tau_thm33 = recommend_tau(report, mode="thm33")
    return report
