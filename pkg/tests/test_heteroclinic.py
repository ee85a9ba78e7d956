import itertools

import numpy as np
import pytest

from rattleback.heteroclinic import (
    HetBranch, HetParams, het_fiber_check, het_limits, het_residual, het_state, het_state_printed,
    write_heteroclinic_csv,
)
from rattleback.integrate import IntegratorConfig, Method, integrate
from rattleback.model import ModelParams, rhs

P2 = ModelParams(2)
XZ = (HetBranch.PLUS_ZERO, HetBranch.MINUS_ZERO)
YZ = (HetBranch.ZERO_PLUS, HetBranch.ZERO_MINUS)

GRID = list(itertools.product([2, 3], [-2, -1, -0.5, 0.5, 1, 2], [-1, 0, 1], list(HetBranch)))


def test_state_examples():
    assert np.allclose(het_state(HetBranch.ZERO_PLUS, HetParams(1), P2, 0.0), [0, 1, 0])
    assert np.allclose(het_state(HetBranch.PLUS_ZERO, HetParams(1), P2, 0.0), [1, 0, 0])
    t = np.linspace(-3, 3, 13)
    hp = HetParams(1.7, 0.3)
    assert np.array_equal(het_state(HetBranch.ZERO_MINUS, hp, P2, t),
                          het_state(HetBranch.ZERO_PLUS, hp, P2, t) * [1, -1, 1])
    assert np.array_equal(het_state(HetBranch.MINUS_ZERO, hp, P2, t),
                          het_state(HetBranch.PLUS_ZERO, hp, P2, t) * [-1, 1, 1])


@pytest.mark.parametrize("b", list(HetBranch))
@pytest.mark.parametrize("M,k", [(1, 0), (0.5, 1), (-2, -1), (1.5, 0.4)])
def test_scaled_form_matches_printed_form(b, M, k):
    hp = HetParams(M, k)
    t = np.linspace(-2, 2, 41) / abs(M)
    a = het_state(b, hp, P2, t)
    ref = het_state_printed(b, hp, P2, t)
    assert np.allclose(a, ref, rtol=1e-12, atol=1e-12 * abs(M))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_scaled_form_survives_overflow():
    # cosh(2v) overflows for 2v > 710; the printed quotient becomes inf/inf
    t = np.array([400.0])
    printed = het_state_printed(HetBranch.ZERO_PLUS, HetParams(1), P2, t)
    scaled = het_state(HetBranch.ZERO_PLUS, HetParams(1), P2, t)
    assert np.isnan(printed[0, 2])
    assert scaled[0, 2] == 1.0 and 0 < scaled[0, 1] < 1e-170


@pytest.mark.parametrize("b", [HetBranch.ZERO_PLUS, HetBranch.PLUS_ZERO])
def test_residual_examples(b):
    t = np.linspace(-5, 5, 11)
    assert het_residual(b, HetParams(1), P2, t) < 1e-8
    assert het_residual(b, HetParams(1), P2, [-40.0, 40.0]) < 1e-10


@pytest.mark.parametrize("lam,M,k,b", GRID)
def test_residual_grid(lam, M, k, b):
    p = ModelParams(lam)
    t = np.linspace(-10 / abs(M), 10 / abs(M), 201)
    assert het_residual(b, HetParams(M, k), p, t) < 1e-7


def test_branch_agrees_with_integrated_flow():
    hp = HetParams(1.0)
    s0 = het_state(HetBranch.PLUS_ZERO, hp, P2, 0.0)
    traj = integrate(s0, rhs, IntegratorConfig(Method.RK45, t_end=2.0), P2)
    assert np.allclose(traj.final, het_state(HetBranch.PLUS_ZERO, hp, P2, 2.0), atol=1e-9)
    s0 = het_state(HetBranch.ZERO_MINUS, hp, P2, -1.0)
    traj = integrate(s0, rhs, IntegratorConfig(Method.RK45, t_end=3.0), P2)
    assert np.allclose(traj.final, het_state(HetBranch.ZERO_MINUS, hp, P2, 2.0), atol=1e-9)


@pytest.mark.parametrize("lam", [2, 3])
@pytest.mark.parametrize("M", [-2, 0.5, 1, 2])
@pytest.mark.parametrize("b", list(HetBranch))
def test_limits_are_the_spin_axis_pair(lam, M, b):
    p = ModelParams(lam)
    start, end = het_limits(b, HetParams(M), p)
    A = abs(M)
    # on y = 0, z' = -λx² <= 0, so those branches run from +|M| to -|M|
    expected = ([0, 0, A], [0, 0, -A]) if b in XZ else ([0, 0, -A], [0, 0, A])
    assert np.linalg.norm(start - expected[0]) < 1e-8
    assert np.linalg.norm(end - expected[1]) < 1e-8


def test_z_monotone_direction():
    t = np.linspace(-5, 5, 101)
    z_xz = het_state(HetBranch.PLUS_ZERO, HetParams(1), P2, t)[:, 2]
    z_yz = het_state(HetBranch.ZERO_PLUS, HetParams(1), P2, t)[:, 2]
    assert np.all(np.diff(z_xz) < 0) and np.all(np.diff(z_yz) > 0)


@pytest.mark.parametrize("k", [-1.0, 0.5, 2.0])
def test_shift_covariance(k):
    t = np.linspace(-4, 4, 33)
    for b in YZ:
        assert np.allclose(het_state(b, HetParams(1.3, k), P2, t), het_state(b, HetParams(1.3), P2, t + k), atol=1e-14)
    # on the (±,0) branches k enters next to λt: a shift by -k/λ
    for lam in (2, 3):
        p = ModelParams(lam)
        for b in XZ:
            assert np.allclose(het_state(b, HetParams(1.3, k), p, t),
                               het_state(b, HetParams(1.3), p, t - k / lam), atol=1e-14)


@pytest.mark.parametrize("b", list(HetBranch))
def test_fiber_membership(b):
    for M in (-2, 0.5, 1, 3):
        t = np.linspace(-10, 10, 401) / abs(M)
        dH, dC = het_fiber_check(b, HetParams(M, 0.3), P2, t)
        assert dH < 1e-10 and dC < 1e-10 * max(1, M * M)


def test_semicircles_disjoint():
    t = np.linspace(-8, 8, 401)
    arcs = {b: het_state(b, HetParams(1), P2, t) for b in HetBranch}
    assert np.all(arcs[HetBranch.PLUS_ZERO][:, 0] > 0) and np.all(arcs[HetBranch.MINUS_ZERO][:, 0] < 0)
    assert np.all(arcs[HetBranch.ZERO_PLUS][:, 1] > 0) and np.all(arcs[HetBranch.ZERO_MINUS][:, 1] < 0)
    assert np.all(arcs[HetBranch.PLUS_ZERO][:, 1] == 0) and np.all(arcs[HetBranch.ZERO_PLUS][:, 0] == 0)


def test_zero_M_rejected():
    with pytest.raises(ValueError):
        HetParams(0)


def test_csv(tmp_path):
    path = tmp_path / "h.csv"
    t = np.linspace(-2, 2, 5)
    write_heteroclinic_csv(path, HetBranch.ZERO_PLUS, HetParams(1), P2, t)
    rows = path.read_text().splitlines()
    assert rows[0] == "t,x,y,z,H,C,residual"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (5, 7) and data[:, 6].max() < 1e-8
