import numpy as np
import pytest

from cemsplit.cem import build_cem_basis, build_global_cem_basis, solve_aux_spectral
from cemsplit.coarse import build_coarse_decomposition
from cemsplit.complement import build_v2_first, build_v2_second
from cemsplit.fem import build_fine_mesh, build_system
from cemsplit.fields import generate_streak_field


class Desk:
    """A small complete setup: n=20 fine cells, N=5 coarse cells per side."""

    def __init__(self, kappa, layers=2, L=3, J=3):
        self.mesh = build_fine_mesh(20)
        self.system = build_system(self.mesh, kappa)
        self.decomp = build_coarse_decomposition(self.mesh, 5, layers)
        self.aux = solve_aux_spectral(self.system, self.decomp, L)
        self.J = J

    @property
    def V1(self):
        if not hasattr(self, "_V1"):
            self._V1 = build_cem_basis(self.system, self.decomp, self.aux)
        return self._V1

    @property
    def V1_glo(self):
        if not hasattr(self, "_V1g"):
            self._V1g = build_global_cem_basis(self.system, self.aux)
        return self._V1g

    @property
    def V2_first(self):
        if not hasattr(self, "_V2f"):
            self._V2f = build_v2_first(self.system, self.decomp, self.aux, self.J)
        return self._V2f

    @property
    def V2_second_glo(self):
        if not hasattr(self, "_V2g"):
            self._V2g = build_v2_second(self.system, self.decomp, self.aux, self.J, variant="global")
        return self._V2g

    @property
    def V2_second(self):
        if not hasattr(self, "_V2s"):
            self._V2s = build_v2_second(self.system, self.decomp, self.aux, self.J)
        return self._V2s


@pytest.fixture(scope="session")
def desk_uniform():
    return Desk(np.ones(400))


@pytest.fixture(scope="session")
def desk_streaks():
    return Desk(generate_streak_field(20, streak_value=1e4, seed=3, density=0.3, min_length=4, max_length=12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report lines, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
