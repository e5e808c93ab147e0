import math
import warnings

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from cemsplit.cem import SubspaceBasis
from cemsplit.complement import (ConstantsReport, SubspaceOverlapWarning, build_v2_first, compute_beta,
                                 compute_constants, compute_gamma, compute_supG, recommend_tau)
from cemsplit.errors import ConfigError, InfeasibleSplitError


def _rel_energy(v, A):
    return math.sqrt(max(v @ (A @ v), 0.0))


# first choice -----------------------------------------------------------------


def test_first_choice_in_kernel_and_supported(desk_streaks):
    d = desk_streaks
    V2 = d.V2_first
    P = d.aux.pair(V2.vectors)
    assert np.abs(P).max() <= 1e-8 * max(1.0, np.abs(d.aux.constraint).max())
    for col, (p, _, _) in enumerate(V2.origin):
        outside = np.setdiff1d(np.arange(d.mesh.node_count), d.decomp.neighborhood(p).interior)
        assert not np.any(V2.vectors[outside, col])
        v = V2.vectors[:, col]
        assert v @ (d.system.A @ v) == pytest.approx(1.0, rel=1e-10)


def test_first_choice_dimension(desk_uniform):
    assert desk_uniform.V2_first.dim == 16 * 3


def test_first_choice_matches_qr_nullspace_oracle(desk_uniform):
    d = desk_uniform
    V2 = build_v2_first(d.system, d.decomp, d.aux, J=1)
    A, M = d.system.A.toarray(), d.system.M.toarray()
    C = d.aux.constraint.toarray()
    for col, (p, _, lam) in enumerate(V2.origin):
        omega = d.decomp.neighborhood(p)
        D = omega.interior
        Cd = C[d.aux.rows_of(omega.elements)][:, D]
        Q, R = np.linalg.qr(Cd.T, mode="complete")
        Z = Q[:, Cd.shape[0]:]
        Bz = Z.T @ M[np.ix_(D, D)] @ Z * d.decomp.N**2
        Lc = np.linalg.cholesky(Bz)
        Li = np.linalg.inv(Lc)
        oracle = np.linalg.eigvalsh(Li @ (Z.T @ A[np.ix_(D, D)] @ Z) @ Li.T)[0]
        assert lam == pytest.approx(oracle, rel=1e-8, abs=1e-8)


def test_per_color_supG_bounded_by_tails(desk_streaks):
    d = desk_streaks
    V2 = d.V2_first
    tails = V2.info["tails"]
    top = {}
    for p, j, lam in V2.origin:
        top[p] = max(top.get(p, 0.0), lam)
    for part in V2.parts():
        g = compute_supG(part, d.system.A, d.system.M, d.decomp.H)
        assert g <= np.nanmax(tails) * (1 + 1e-8)
        # same-color neighborhoods are disjoint, so the color sup is the largest kept eigenvalue
        owners = {o[0] for o in part.origin}
        assert g == pytest.approx(max(top[p] for p in owners), rel=1e-8)


# second choice ----------------------------------------------------------------


def test_second_choice_global_constraints(desk_streaks):
    d = desk_streaks
    Z = d.V2_second_glo
    aux2 = Z.info["aux2"]
    assert np.abs(d.aux.pair(Z.vectors)).max() <= 1e-8
    np.testing.assert_allclose(aux2.pair(Z.vectors), np.eye(aux2.size), atol=1e-8)


def test_second_choice_aux_is_mass_orthonormal_and_in_kernel(desk_streaks):
    aux2 = desk_streaks.V2_second_glo.info["aux2"]
    aux = desk_streaks.aux
    for i, (vec, w) in enumerate(zip(aux2.vectors, aux2.weights)):
        np.testing.assert_allclose(vec.T @ w @ vec, np.eye(vec.shape[1]), atol=1e-10)
        np.testing.assert_allclose(aux.vectors[i].T @ aux.weights[i] @ vec, 0.0, atol=1e-8)


def test_cross_a_orthogonality_glo(desk_streaks):
    d = desk_streaks
    A = d.system.A
    Phi, Z = d.V1_glo.vectors, d.V2_second_glo.vectors
    cross = Phi.T @ (A @ Z)
    na = np.sqrt(np.einsum("ij,ij->j", Phi, A @ Phi))
    nz = np.sqrt(np.einsum("ij,ij->j", Z, A @ Z))
    assert np.all(np.abs(cross) <= 1e-8 * np.outer(na, nz))


def test_second_choice_localized_constraints(desk_streaks):
    d = desk_streaks
    Z = d.V2_second
    aux2 = Z.info["aux2"]
    P1, P2 = d.aux.pair(Z.vectors), aux2.pair(Z.vectors)
    for col, (i, j, _) in enumerate(Z.origin):
        elems = d.decomp.oversampled(i).elements
        assert np.abs(P1[d.aux.rows_of(elems), col]).max() <= 1e-8
        rows = aux2.rows_of(elems)
        np.testing.assert_allclose(P2[rows, col], (rows == aux2.offsets[i] + j).astype(float), atol=1e-8)


def test_second_choice_groups_by_element_color(desk_uniform):
    V2 = desk_uniform.V2_second
    assert V2.dim == 25 * 3
    assert sorted(set(V2.groups.tolist())) == [0, 1, 2, 3]


def test_bad_variant(desk_uniform):
    from cemsplit.complement import build_v2_second
    with pytest.raises(ConfigError):
        build_v2_second(desk_uniform.system, desk_uniform.decomp, desk_uniform.aux, variant="semi")


# constants --------------------------------------------------------------------


def test_gamma_simple_cases():
    I = np.eye(4)
    e = I[:, [0]]
    assert compute_gamma(I[:, [0, 1]], I[:, [2, 3]], I) == 0.0
    u = np.array([[1.0], [0.0], [0.0], [0.0]])
    v = np.array([[0.5], [math.sqrt(3) / 2], [0.0], [0.0]])
    assert compute_gamma(u, v, I) == pytest.approx(0.5, abs=1e-14)
    with pytest.warns(SubspaceOverlapWarning):
        assert compute_gamma(np.hstack([e, I[:, [1]]]), np.hstack([e, I[:, [2]]]), I) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m1=st.integers(1, 4), m2=st.integers(1, 4))
def test_gamma_matches_principal_angles(seed, m1, m2):
    rng = np.random.default_rng(seed)
    n = 12
    B = rng.standard_normal((n, n))
    M = B @ B.T + n * np.eye(n)
    X1, X2 = rng.standard_normal((n, m1)), rng.standard_normal((n, m2))
    R = np.linalg.cholesky(M).T
    oracle = math.cos(np.min(sla.subspace_angles(R @ X1, R @ X2)))
    assert compute_gamma(X1, X2, M) == pytest.approx(oracle, abs=1e-10)
    assert 0.0 <= compute_gamma(X1, X2, M) <= 1.0


def test_beta_disjoint_single_vectors():
    I = np.eye(6)
    assert compute_beta([I[:, [0]], I[:, [2]], I[:, [5]]], I) == 0.0
    with pytest.raises(ConfigError):
        compute_beta([I[:, [0]]], I)


def test_beta_matches_pairwise_angle_oracle(desk_uniform):
    d = desk_uniform
    M = d.system.M.toarray()
    R = np.linalg.cholesky(M + 0.0).T
    parts = d.V2_first.parts()
    assert len(parts) == 4
    oracle = max(math.cos(np.min(sla.subspace_angles(R @ a.vectors, R @ b.vectors)))
                 for k, a in enumerate(parts) for b in parts[k + 1:])
    assert compute_beta(parts, d.system.M) == pytest.approx(oracle, abs=1e-10)
    # within one color the supports are disjoint
    for part in parts:
        G = part.gram(d.system.M)
        owners = np.array([o[0] for o in part.origin])
        assert np.all(G[owners[:, None] != owners[None, :]] == 0.0)


def test_supG_single_vector(desk_uniform, rng):
    d = desk_uniform
    v = rng.standard_normal((d.mesh.node_count, 1))
    v[d.mesh.boundary] = 0.0
    direct = (v[:, 0] @ (d.system.A @ v[:, 0])) / (d.decomp.N**2 * (v[:, 0] @ (d.system.M @ v[:, 0])))
    assert compute_supG(v, d.system.A, d.system.M, d.decomp.H) == pytest.approx(direct, rel=1e-12)


def _report(gamma=0.0, beta=0.0, supG=1.0, per_color=(1.0, 1.0, 1.0, 1.0), H=1.0, omega=1.0):
    return ConstantsReport(gamma=gamma, beta=beta, supG_V1=1.0, supG_V2=supG, supG_per_color=list(per_color),
                           H=H, omega=omega)


def test_recommend_tau_plug_in():
    assert recommend_tau(_report(), mode="thm32") == 1.0
    assert recommend_tau(_report(), mode="thm33") == 1 / 16
    assert recommend_tau(_report(), omega=0.0, mode="thm32") == 0.5
    with pytest.raises(InfeasibleSplitError):
        recommend_tau(_report(gamma=1.0))
    with pytest.raises(ConfigError):
        recommend_tau(_report(), mode="thm34")
    with pytest.raises(ConfigError):
        recommend_tau(_report(), omega=1.5)


def test_recommend_tau_paper_scale_arithmetic():
    gamma, beta, supG = 0.98, 0.97, 1.75e2
    rep = _report(gamma, beta, supG, per_color=(70.0, 80.0, supG, 60.0), H=0.1)
    assert recommend_tau(rep, mode="thm32") == pytest.approx((1 - gamma**2) / (supG * 100.0), rel=1e-12)
    expected = (1 / 16) * (1 - gamma**2) * (1 - beta**2) ** 2 / (supG * 100.0)
    assert recommend_tau(rep, mode="thm33") == pytest.approx(expected, rel=1e-12)


def test_constants_report_on_desk(desk_streaks):
    d = desk_streaks
    for V2 in (d.V2_first, d.V2_second):
        rep = compute_constants(d.system, d.decomp, d.V1, V2)
        assert 0.0 <= rep.gamma < 1.0 and 0.0 <= rep.beta < 1.0
        assert rep.supG_V1 > 0 and rep.supG_V2 > 0 and rep.tau_thm32 > 0 and rep.tau_thm33 > 0
        assert rep.colors == 4
        assert max(rep.supG_per_color) <= rep.supG_V2 * (1 + 1e-10)
        assert rep.contrast == pytest.approx(1e4)


def test_supG_gap_grows_with_contrast(desk_uniform):
    # kappa = 1: no contrast gap between the two spaces
    d = desk_uniform
    g1 = compute_supG(d.V1, d.system.A, d.system.M, d.decomp.H)
    g2 = compute_supG(d.V2_first, d.system.A, d.system.M, d.decomp.H)
    assert 1 / 100 < g1 / g2 < 100


def test_overlap_warning_is_not_raised_for_direct_sum(desk_uniform):
    d = desk_uniform
    with warnings.catch_warnings():
        warnings.simplefilter("error", SubspaceOverlapWarning)
        compute_gamma(d.V1, d.V2_first, d.system.M)


def test_basis_part_requires_groups(desk_uniform):
    with pytest.raises(ValueError):
        SubspaceBasis(np.eye(3), "x").part(0)
