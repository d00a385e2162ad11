import numpy as np
import pytest

from ringpot.geometry import ConvexRing, ConvexShape
from ringpot.grid import build_grid
from ringpot.inf_solver import InfSolverConfig, solve_inf
from ringpot.p_solver import PSolverConfig, solve_p

H_FINE = 1.0 / 128.0
H_MID = 1.0 / 64.0
H_COARSE = 1.0 / 32.0


def make_ring(name: str) -> ConvexRing:
    if name == "disk_point":
        return ConvexRing(outer=ConvexShape.disk((0.0, 0.0), 1.0),
                          inner=ConvexShape.point((0.0, 0.0)))
    if name == "square_point":
        return ConvexRing(outer=ConvexShape.polygon([[0, 0], [1, 0], [1, 1], [0, 1]]),
                          inner=ConvexShape.point((0.5, 0.5)))
    if name == "annulus":
        return ConvexRing(outer=ConvexShape.disk((0.0, 0.0), 1.0),
                          inner=ConvexShape.disk((0.0, 0.0), 0.5))
    raise KeyError(name)


class SolveCache:
    """Session-wide memo of grids, potentials and solver stats."""

    def __init__(self):
        self._grids = {}
        self._fields = {}
        self.stats = {}

    def grid(self, ring_name: str, h: float):
        key = (ring_name, h)
        if key not in self._grids:
            self._grids[key] = build_grid(make_ring(ring_name), h)
        return self._grids[key]

    def field(self, ring_name: str, which, h: float):
        """which is 'inf' or a float exponent."""
        key = (ring_name, which, h)
        if key not in self._fields:
            grid = self.grid(ring_name, h)
            if which == "inf":
                fld, stats = solve_inf(grid, InfSolverConfig())
            else:
                fld, stats = solve_p(grid, PSolverConfig(p=float(which)))
            self._fields[key] = fld
            self.stats[key] = stats
        return self._fields[key]


@pytest.fixture(scope="session")
def cache():
    return SolveCache()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
