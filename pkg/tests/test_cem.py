import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cemsplit.cem import (build_cem_basis, check_conditioning, field_norm, kappa_tilde, load_basis, local_field,
                          project_aux, save_basis, solve_aux_spectral)
from cemsplit.coarse import build_coarse_decomposition, pou_gradient_sum
from cemsplit.errors import ConditioningError, ConfigError
from cemsplit.fem import assemble, build_fine_mesh, build_system


def _dense_oracle_eigs(system, decomp, i, weight):
    """Element eigenvalues from a globally assembled element block and a standard eigensolve."""
    K = decomp.element(i)
    nodes = K.nodes[~system.mesh.boundary[K.nodes]]
    A = assemble(system.mesh, system.kappa, "stiffness", cells=K.cells).toarray()[np.ix_(nodes, nodes)]
    S = assemble(system.mesh, weight, "weighted_mass", cells=K.cells).toarray()[np.ix_(nodes, nodes)]
    L = np.linalg.cholesky(S)
    Li = np.linalg.inv(L)
    return np.linalg.eigvalsh(Li @ A @ Li.T)


def test_aux_matches_dense_oracle(desk_uniform):
    d = desk_uniform
    w = kappa_tilde(d.system, d.decomp)
    for i in range(d.decomp.n_elements):
        oracle = _dense_oracle_eigs(d.system, d.decomp, i, w)
        np.testing.assert_allclose(d.aux.eigenvalues[i], oracle[:3], atol=1e-8, rtol=1e-8)
        assert d.aux.next_eigenvalues[i] == pytest.approx(oracle[3], rel=1e-8)


def test_aux_streaks_match_dense_oracle(desk_streaks):
    d = desk_streaks
    w = kappa_tilde(d.system, d.decomp)
    for i in (0, 7, 12):
        oracle = _dense_oracle_eigs(d.system, d.decomp, i, w)
        np.testing.assert_allclose(d.aux.eigenvalues[i], oracle[:3], atol=1e-8, rtol=1e-8)


def test_aux_constant_mode_on_interior_element(desk_uniform):
    d = desk_uniform
    i = 6  # coarse element (1, 1) does not touch the domain boundary
    assert d.aux.eigenvalues[i][0] == pytest.approx(0.0, abs=1e-10)
    psi = d.aux.vectors[i][:, 0]
    np.testing.assert_allclose(psi, psi[0], rtol=1e-8)


def test_aux_s_orthonormal_and_nonnegative(desk_streaks):
    aux = desk_streaks.aux
    for vec, w, lam in zip(aux.vectors, aux.weights, aux.eigenvalues):
        np.testing.assert_allclose(vec.T @ w @ vec, np.eye(vec.shape[1]), atol=1e-10)
        assert np.all(lam >= -1e-10)
        assert np.all(np.diff(lam) >= 0)


def test_aux_eigenvalues_scale_invariant(desk_streaks):
    d = desk_streaks
    scaled = build_system(d.mesh, 7.5 * d.system.kappa)
    aux = solve_aux_spectral(scaled, d.decomp, 3)
    for a, b in zip(aux.eigenvalues, d.aux.eigenvalues):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


def test_kappa_tilde_modes(desk_uniform):
    d = desk_uniform
    np.testing.assert_allclose(kappa_tilde(d.system, d.decomp, "H-2"), d.system.kappa * 25.0)
    np.testing.assert_allclose(kappa_tilde(d.system, d.decomp, "pou"), pou_gradient_sum(d.decomp))
    with pytest.raises(ConfigError):
        kappa_tilde(d.system, d.decomp, "grad")
    pou = solve_aux_spectral(d.system, d.decomp, 2, mode="pou")
    assert pou.mode == "pou" and pou.size == 2 * 25


def test_aux_rejects_bad_L(desk_uniform):
    with pytest.raises(ConfigError):
        solve_aux_spectral(desk_uniform.system, desk_uniform.decomp, 0)


def test_projection_fixes_aux_functions(desk_streaks):
    aux = desk_streaks.aux
    for k in (0, 5, aux.size - 1):
        psi = aux.embed(k)
        fields = project_aux(psi, aux)
        i = aux.owner[k]
        np.testing.assert_allclose(fields[i], psi[aux.nodes[i]], atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_projection_idempotent(desk_streaks, seed):
    aux = desk_streaks.aux
    v = np.random.default_rng(seed).standard_normal(desk_streaks.mesh.node_count)
    once = project_aux(v, aux)
    twice = project_aux(once, aux)
    diff = [a - b for a, b in zip(once, twice)]
    assert field_norm(diff, aux) <= 1e-10 * max(field_norm(once, aux), 1.0)


def test_projection_kernel(desk_streaks, rng):
    aux = desk_streaks.aux
    C = aux.constraint.toarray()
    v = rng.standard_normal(C.shape[1])
    v -= C.T @ np.linalg.solve(C @ C.T, C @ v)
    assert field_norm(project_aux(v, aux), aux) <= 1e-10 * field_norm(local_field(v, aux), aux)


def test_cem_constraints_inside_oversampling(desk_streaks):
    d = desk_streaks
    V1, aux = d.V1, d.aux
    P = aux.pair(V1.vectors)  # P[k, col] = s(psi_k, phi_col)
    for col, (i, j, _) in enumerate(V1.origin):
        rows = aux.rows_of(d.decomp.oversampled(i).elements)
        target = (rows == aux.offsets[i] + j).astype(float)
        np.testing.assert_allclose(P[rows, col], target, atol=1e-8)


def test_cem_support_inside_oversampling(desk_streaks):
    d = desk_streaks
    for col, (i, _, _) in enumerate(d.V1.origin):
        outside = np.setdiff1d(np.arange(d.mesh.node_count), d.decomp.oversampled(i).interior)
        assert not np.any(d.V1.vectors[outside, col])


def _energy(v, A):
    return float(np.sqrt(max(v @ (A @ v), 0.0)))


def test_full_oversampling_equals_global(desk_streaks):
    d = desk_streaks
    full = build_cem_basis(d.system, d.decomp, d.aux, layers=d.decomp.N)
    A = d.system.A
    for col in range(full.dim):
        diff = full.vectors[:, col] - d.V1_glo.vectors[:, col]
        assert _energy(diff, A) <= 1e-8 * _energy(d.V1_glo.vectors[:, col], A)


def test_localization_converges_to_global(desk_streaks):
    d = desk_streaks
    A = d.system.A
    errs = []
    for ell in (1, 2, 3):
        loc = build_cem_basis(d.system, d.decomp, d.aux, layers=ell)
        errs.append(max(_energy(loc.vectors[:, c] - d.V1_glo.vectors[:, c], A) for c in range(loc.dim)))
    assert errs[0] > errs[1] > errs[2]


def test_global_basis_tail_energy_decays(desk_streaks):
    d = desk_streaks
    mesh = d.mesh
    phi = d.V1_glo.vectors[:, 0]  # a function of corner element 0
    tails = []
    for ell in (1, 2, 3, 4):
        inside = d.decomp.oversampled(0, ell).cells
        outside = np.setdiff1d(np.arange(mesh.cell_count), inside)
        A_out = assemble(mesh, d.system.kappa, "stiffness", cells=outside)
        tails.append(phi @ (A_out @ phi))
    assert all(a > b for a, b in zip(tails, tails[1:]))
    assert tails[-1] == 0.0


def test_global_basis_optimality(desk_streaks, rng):
    d = desk_streaks
    A = d.system.A
    C = d.aux.constraint.toarray()
    f = d.system.free
    Cf = C[:, f]
    phi = d.V1_glo.vectors
    mu = d.V1_glo.multipliers
    resid = A[f][:, f] @ phi[f] + Cf.T @ mu
    assert np.abs(resid).max() <= 1e-8 * abs(A).max()
    np.testing.assert_allclose(C @ phi, np.eye(d.aux.size), atol=1e-8)
    for col in rng.choice(phi.shape[1], 5, replace=False):
        w = np.zeros(d.mesh.node_count)
        w[f] = rng.standard_normal(f.size)
        w[f] -= Cf.T @ np.linalg.solve(Cf @ Cf.T, Cf @ w[f])
        competitor = phi[:, col] + 1e-3 * w
        assert phi[:, col] @ (A @ phi[:, col]) <= competitor @ (A @ competitor)


def test_global_basis_a_orthogonal_to_kernel(desk_streaks, rng):
    d = desk_streaks
    A = d.system.A
    C = d.aux.constraint.toarray()
    f = d.system.free
    for _ in range(5):
        v = np.zeros(d.mesh.node_count)
        v[f] = rng.standard_normal(f.size)
        v[f] -= C[:, f].T @ np.linalg.solve(C[:, f] @ C[:, f].T, C[:, f] @ v[f])
        Av = A @ v
        for col in range(d.V1_glo.dim):
            phi = d.V1_glo.vectors[:, col]
            assert abs(phi @ Av) <= 1e-8 * _energy(phi, A) * _energy(v, A)


def test_basis_dump_round_trip(desk_uniform, tmp_path):
    V2 = desk_uniform.V2_first
    path = tmp_path / "v2.txt"
    save_basis(V2, path)
    back = load_basis(path)
    assert back.tag == V2.tag and back.origin == V2.origin
    np.testing.assert_array_equal(back.vectors, V2.vectors)
    np.testing.assert_array_equal(back.groups, V2.groups)


def test_conditioning_check(desk_uniform):
    d = desk_uniform
    assert check_conditioning(d.V1, d.system.M) < 1e12
    dup = type(d.V1)(np.hstack([d.V1.vectors[:, :2], d.V1.vectors[:, :1]]), "dup")
    with pytest.raises(ConditioningError):
        check_conditioning(dup, d.system.M)


def test_cem_needs_a_layer(desk_uniform):
    with pytest.raises(ConfigError):
        build_cem_basis(desk_uniform.system, desk_uniform.decomp, desk_uniform.aux, layers=0)


def test_small_oversampling_rebuild():
    mesh = build_fine_mesh(8)
    system = build_system(mesh, np.ones(64))
    decomp = build_coarse_decomposition(mesh, 4, 1)
    aux = solve_aux_spectral(system, decomp, 1)
    V = build_cem_basis(system, decomp, aux)
    assert V.dim == 16 and V.tag == "V1_cem"
