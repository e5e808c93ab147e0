"""Time stepping in reduced coordinates of V_{H,1} + V_{H,2}.

A state holds coordinates ``u1`` (first space) and ``u2`` (second space) at
the current and previous step. Schemes:

``implicit_coarse``
    backward Euler on the joint space.
``orthogonal_split``
    first space implicit, second space explicit; requires M12 = 0.
``partial_explicit``
    the mu = 0 splitting, with history terms coupling the two spaces and
    omega blending old/new first-space values in the explicit equation.
``general``
    the mu/omega family; mu = 1 couples both unknowns in one block solve.

Forcing enters the implicit first-space equation at t^{n+1} and the explicit
second-space equation at t^n.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .cem import SubspaceBasis
from .complement import subspace_cosine
from .errors import ConditioningError, ConfigError, SolverError
from .fem import FineSystem, Forcing, Trajectory, as_forcing

SCHEMES = ("implicit_coarse", "orthogonal_split", "partial_explicit", "general")
BLOWUP_FACTOR = 1e6


def _cols(V, rows: int) -> np.ndarray:
    if V is None:
        return np.zeros((rows, 0))
    return V.vectors if isinstance(V, SubspaceBasis) else np.asarray(V, dtype=float).reshape(rows, -1)


@dataclass(eq=False)
class ReducedSystem:
    V1: np.ndarray
    V2: np.ndarray
    A11: np.ndarray
    A12: np.ndarray
    A22: np.ndarray
    M11: np.ndarray
    M12: np.ndarray
    M22: np.ndarray
    F1: Callable[[float], np.ndarray]
    F2: Callable[[float], np.ndarray]
    M_fine: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def m1(self) -> int:
        return self.A11.shape[0]

    @property
    def m2(self) -> int:
        return self.A22.shape[0]

    @property
    def A_joint(self) -> np.ndarray:
        if "A_joint" not in self._cache:
            self._cache["A_joint"] = np.block([[self.A11, self.A12], [self.A12.T, self.A22]])
        return self._cache["A_joint"]

    @property
    def M_joint(self) -> np.ndarray:
        if "M_joint" not in self._cache:
            self._cache["M_joint"] = np.block([[self.M11, self.M12], [self.M12.T, self.M22]])
        return self._cache["M_joint"]

    @property
    def gamma(self) -> float:
        if "gamma" not in self._cache:
            self._cache["gamma"] = subspace_cosine(self.M11, self.M12, self.M22) if self.m1 and self.m2 else 0.0
        return self._cache["gamma"]

    def fine(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        return self.V1 @ u1 + self.V2 @ u2

    def norms(self, u1, u2) -> tuple[float, float]:
        c = np.concatenate([u1, u2])
        return (float(np.sqrt(max(c @ self.M_joint @ c, 0.0))),
                float(np.sqrt(max(c @ self.A_joint @ c, 0.0))))


def reduce(system: FineSystem, V1, V2=None, source: Forcing = None) -> ReducedSystem:
    """Galerkin blocks of A and M over the two bases and the reduced loads."""
    nn = system.mesh.node_count
    X1, X2 = _cols(V1, nn), _cols(V2, nn)
    AX1, AX2 = system.A @ X1, system.A @ X2
    MX1, MX2 = system.M @ X1, system.M @ X2
    sym = lambda G: 0.5 * (G + G.T)
    force = as_forcing(source, nn)
    red = ReducedSystem(
        X1, X2,
        sym(X1.T @ AX1), X1.T @ AX2, sym(X2.T @ AX2),
        sym(X1.T @ MX1), X1.T @ MX2, sym(X2.T @ MX2),
        lambda t: X1.T @ force(t), lambda t: X2.T @ force(t), system.M,
    )
    for G, name in ((red.M11, "V1"), (red.M22, "V2")):
        if G.size:
            ev = np.linalg.eigvalsh(G)
            if ev[0] <= 0 or ev[-1] / ev[0] > 1e12:
                raise ConditioningError(f"{name} basis is numerically rank deficient")
    return red


@dataclass
class SplitState:
    u1: np.ndarray
    u1_prev: np.ndarray
    u2: np.ndarray
    u2_prev: np.ndarray
    step: int = 0

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.u1, self.u2])


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "partial_explicit"
    tau: float = 1e-4
    steps: int = 500
    mu: int = 0
    omega: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError("omega must lie in [0, 1]")
        if self.mu not in (0, 1):
            raise ConfigError("mu must be 0 or 1")
        if self.scheme == "partial_explicit" and self.mu != 0:
            raise ConfigError("partial_explicit fixes mu = 0")


def init_split(u0, reduced: ReducedSystem) -> SplitState:
    """Coupled L2 projection of a fine vector onto V1 + V2; history equals the initial value."""
    if u0 is None or not np.any(u0):
        z1, z2 = np.zeros(reduced.m1), np.zeros(reduced.m2)
        return SplitState(z1, z1.copy(), z2, z2.copy())
    return _project(reduced.M_fine @ np.asarray(u0, dtype=float), reduced)


def _project(Mu0: np.ndarray, reduced: ReducedSystem) -> SplitState:
    rhs = np.concatenate([reduced.V1.T @ Mu0, reduced.V2.T @ Mu0])
    try:
        c = sla.solve(reduced.M_joint, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"initial projection failed: {exc}") from exc
    c1, c2 = c[:reduced.m1], c[reduced.m1:]
    return SplitState(c1, c1.copy(), c2, c2.copy())


# steppers -------------------------------------------------------------------


def _cho(mat: np.ndarray):
    if mat.size == 0:
        return None
    try:
        return sla.cho_factor(mat)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc


def _solve(fac, rhs):
    return rhs.copy() if fac is None else sla.cho_solve(fac, rhs)


def _factors(reduced: ReducedSystem, cfg: SchemeConfig) -> dict:
    key = (cfg.scheme, cfg.tau, cfg.mu, cfg.omega)
    facs = reduced._cache.get(key)
    if facs is not None:
        return facs
    tau = cfg.tau
    if cfg.scheme == "implicit_coarse":
        facs = {"joint": _cho(reduced.M_joint + tau * reduced.A_joint)}
    elif cfg.scheme == "general" and cfg.mu == 1:
        m1 = reduced.m1
        K = np.block([[reduced.M11 + tau * reduced.A11, reduced.M12],
                      [reduced.M12.T + tau * cfg.omega * reduced.A12.T, reduced.M22]])
        try:
            facs = {"block": sla.lu_factor(K) if K.size else None, "m1": m1}
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"block factorization failed: {exc}") from exc
    else:
        if cfg.scheme == "orthogonal_split":
            scale = np.sqrt(np.abs(reduced.M11).max(initial=0) * np.abs(reduced.M22).max(initial=0))
            if reduced.M12.size and np.abs(reduced.M12).max() > 1e-10 * max(scale, 1e-300):
                raise ConfigError("orthogonal_split needs L2-orthogonal spaces (M12 = 0)")
        facs = {"implicit": _cho(reduced.M11 + tau * reduced.A11), "mass2": _cho(reduced.M22)}
    reduced._cache[key] = facs
    return facs


def step(state: SplitState, reduced: ReducedSystem, cfg: SchemeConfig) -> SplitState:
    """Advance one time step."""
    tau = cfg.tau
    t_old = state.step * tau
    t_new = t_old + tau
    facs = _factors(reduced, cfg)
    u1, u2 = state.u1, state.u2
    d1, d2 = u1 - state.u1_prev, u2 - state.u2_prev
    R = reduced
    if cfg.scheme == "implicit_coarse":
        c = state.coords
        F = np.concatenate([R.F1(t_new), R.F2(t_new)])
        c_new = _solve(facs["joint"], R.M_joint @ c + tau * F)
        n1, n2 = c_new[:R.m1], c_new[R.m1:]
    elif cfg.scheme == "general" and cfg.mu == 1:
        rhs1 = R.M11 @ u1 + R.M12 @ u2 - tau * (R.A12 @ u2) + tau * R.F1(t_new)
        rhs2 = (R.M22 @ u2 + R.M12.T @ u1
                - tau * ((1.0 - cfg.omega) * (R.A12.T @ u1) + R.A22 @ u2) + tau * R.F2(t_old))
        rhs = np.concatenate([rhs1, rhs2])
        c_new = rhs if facs["block"] is None else sla.lu_solve(facs["block"], rhs)
        n1, n2 = c_new[:R.m1], c_new[R.m1:]
    elif cfg.scheme == "orthogonal_split":
        n1 = _solve(facs["implicit"], R.M11 @ u1 - tau * (R.A12 @ u2) + tau * R.F1(t_new))
        n2 = _solve(facs["mass2"], R.M22 @ u2 - tau * (R.A12.T @ n1 + R.A22 @ u2) + tau * R.F2(t_old))
    else:  # partial_explicit, or general with mu = 0
        n1 = _solve(facs["implicit"], R.M11 @ u1 - R.M12 @ d2 - tau * (R.A12 @ u2) + tau * R.F1(t_new))
        explicit = (1.0 - cfg.omega) * (R.A12.T @ u1) + cfg.omega * (R.A12.T @ n1) + R.A22 @ u2
        n2 = _solve(facs["mass2"], R.M22 @ u2 - R.M12.T @ d1 - tau * explicit + tau * R.F2(t_old))
    return SplitState(n1, u1.copy(), n2, u2.copy(), state.step + 1)


def monitor(state: SplitState, reduced: ReducedSystem, tau: float, gamma: float | None = None) -> float:
    """(gamma^2/2) sum_i |u_i^n - u_i^{n-1}|^2 + (tau/2) |u_H^n|_a^2."""
    g = reduced.gamma if gamma is None else gamma
    d1, d2 = state.u1 - state.u1_prev, state.u2 - state.u2_prev
    inc = d1 @ reduced.M11 @ d1 + d2 @ reduced.M22 @ d2
    _, en = reduced.norms(state.u1, state.u2)
    return 0.5 * g**2 * inc + 0.5 * tau * en**2


def run(cfg: SchemeConfig, reduced: ReducedSystem, state0: SplitState, stride: int = 1,
        gamma: float | None = None) -> Trajectory:
    """Run ``cfg.steps`` steps, recording norms and the stability monitor.

    Stops early with ``blowup`` set once the L2 norm exceeds
    ``1e6 * max(|u_H^0|, 1)`` or becomes non-finite.
    """
    traj = Trajectory(tau=cfg.tau, stride=stride)
    state = replace(state0)
    l2, en = reduced.norms(state.u1, state.u2)
    limit = BLOWUP_FACTOR * max(l2, 1.0)
    traj.record(state.step * cfg.tau, l2, en, state=state.coords, monitor=monitor(state, reduced, cfg.tau, gamma))
    for _ in range(cfg.steps):
        state = step(state, reduced, cfg)
        coords = state.coords
        if not np.all(np.isfinite(coords)):
            traj.record(state.step * cfg.tau, np.inf, np.inf, monitor=np.inf)
            traj.blowup, traj.blowup_step = True, state.step
            break
        l2, en = reduced.norms(state.u1, state.u2)
        traj.record(state.step * cfg.tau, l2, en, state=coords, monitor=monitor(state, reduced, cfg.tau, gamma))
        if l2 > limit:
            traj.blowup, traj.blowup_step = True, state.step
            break
    traj.final_state = state
    return traj


def fine_states(traj: Trajectory, reduced: ReducedSystem) -> list:
    """Fine dof vectors u_H = V1 u1 + V2 u2 for the stored states."""
    return [reduced.fine(c[:reduced.m1], c[reduced.m1:]) for c in traj.states]
