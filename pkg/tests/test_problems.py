import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from blockstep.dirk import EngineSettings, pipelined_run
from blockstep.krylov import SolveSettings
from blockstep.problems.convdiff import ConvDiffData, assemble_convdiff
from blockstep.problems.diffreact import DiffReactData, assemble_diffreact
from blockstep.problems.grid import Q1Assembler, StructuredGrid
from blockstep.problems.manufactured import ManufacturedProblem
from blockstep.problems.richards import (VanGenuchtenSoil, assemble_richards, richards_grid,
                                         van_genuchten)
from blockstep.sparse import spmv
from blockstep.tableau import implicit_euler
from blockstep.vtk import write_snapshot

SOIL = VanGenuchtenSoil()


# --- grid and Q1 -------------------------------------------------------------

def test_grid_validation_and_numbering():
    with pytest.raises(ValueError):
        StructuredGrid(0, 3)
    g = StructuredGrid(3, 2, 2.0, 1.0)
    assert g.hx == pytest.approx(2 / 3) and g.cell(2, 1) == 5 and g.vertex(3, 2) == 11


def test_q1_mass_totals():
    g = StructuredGrid(5, 7, 2.0, 3.0)
    fe = Q1Assembler(g)
    assert fe.mass.to_dense().sum() == pytest.approx(6.0, rel=1e-12)
    assert fe.lumped_mass.sum() == pytest.approx(6.0, rel=1e-12)
    assert fe.lumped_mass[g.vertex(0, 0)] == pytest.approx(g.hx * g.hy / 4, rel=1e-12)
    assert fe.lumped_mass[g.vertex(2, 3)] == pytest.approx(g.hx * g.hy, rel=1e-12)


def test_q1_stiffness_kills_constants():
    fe = Q1Assembler(StructuredGrid(4, 4))
    k = fe.weighted_stiffness(np.ones(fe.qx.shape))
    assert np.abs(spmv(k, np.ones(fe.n))).max() < 1e-13
    x, y = fe.grid.vertex_coords()
    # int grad(x) . grad(x) = |Omega|
    assert x @ spmv(k, x) == pytest.approx(1.0, rel=1e-12)


# --- convection-diffusion ------------------------------------------------------

def test_convdiff_constant_state_no_flow():
    data = ConvDiffData(diffusion=1.0, velocity=(0.0, 0.0), reaction=0.0)
    p = assemble_convdiff(StructuredGrid(6, 6), data)
    r = spmv(p.stiffness(), np.ones(p.n))
    g = p.grid
    interior = g.cell(*np.meshgrid(np.arange(1, 5), np.arange(1, 5))).ravel()
    assert np.abs(r[interior]).max() < 1e-13


def hand_upwind(n, bx, by, dirichlet):
    h = 1.0 / n
    a = np.zeros((n * n, n * n))
    for j in range(n):
        for i in range(n):
            p = j * n + i
            for di, dj, vn in ((1, 0, bx * h), (-1, 0, -bx * h), (0, 1, by * h), (0, -1, -by * h)):
                ii, jj = i + di, j + dj
                inside = 0 <= ii < n and 0 <= jj < n
                if vn > 0:
                    a[p, p] += vn
                elif inside:
                    a[p, jj * n + ii] += vn
    return a


def test_convdiff_pure_convection_stencil():
    data = ConvDiffData(diffusion=0.0, reaction=0.0)
    p = assemble_convdiff(StructuredGrid(4, 4), data)
    ref = hand_upwind(4, 1.0, -0.5, data.dirichlet_sides)
    assert np.allclose(p.stiffness().to_dense(), ref, rtol=0, atol=1e-15)
    assert np.allclose(p.stiffness().to_dense().sum(axis=1), ref.sum(axis=1), atol=1e-15)


@pytest.mark.parametrize("t", [0.0, 0.4, 1.3])
def test_convdiff_conservation(t):
    data = ConvDiffData(diffusion=0.05)
    p = assemble_convdiff(StructuredGrid(12, 9), data)
    u = np.random.default_rng(1).standard_normal(p.n)
    g = p.grid
    total = np.sum(spmv(p.stiffness(), u) - p.rhs(t)) - data.reaction * g.hx * g.hy * u.sum()
    flux = p.boundary_flux(t, u)
    assert total == pytest.approx(flux, rel=1e-12, abs=1e-12)


def test_convdiff_boundary_data():
    p = assemble_convdiff(StructuredGrid(8, 8))
    assert not p.rhs(0.0).any()
    t = np.pi / 12
    y = np.array([0.1, 0.3, 0.7, 0.85, 0.9])
    vals = p.data.boundary_value(t, np.zeros(5), y)
    assert np.allclose(vals, [0.0, 0.5, 0.5, 0.5, 0.0], rtol=0, atol=1e-15)
    assert p.data.boundary_value(np.pi / 4, np.zeros(1), np.array([0.99]))[0] == 1.0
    top = p.data.boundary_value(t, np.full(3, 0.5), np.ones(3))
    assert not top.any()
    assert p.mass().diagonal() == pytest.approx(np.full(64, 1 / 64))


# --- diffusion-reaction ------------------------------------------------------------

def test_diffreact_degenerate_states():
    p = assemble_diffreact(StructuredGrid(5, 5))
    m = p.fe.mass.to_dense()
    assert np.allclose(p.stiffness(np.zeros(p.n)).to_dense(), m, atol=1e-15)
    assert np.abs(p.stiffness(np.ones(p.n)).to_dense()).max() < 1e-15
    assert np.allclose(p.jacobian(0.0, np.zeros(p.n)).to_dense(), m, atol=1e-15)
    assert np.allclose(p.jacobian(0.0, np.ones(p.n)).to_dense(), -m, atol=1e-15)


def test_diffreact_jacobian_vs_finite_differences():
    p = assemble_diffreact(StructuredGrid(8, 8))
    rng = np.random.default_rng(2)
    u = rng.uniform(0.1, 0.9, p.n)
    jac = p.jacobian(0.3, u).to_dense()
    fd = oracles.fd_jacobian(lambda v: p.apply_f(0.3, v), u, 1e-6)
    assert np.abs(jac - fd).max() <= 1e-5 * np.abs(jac).max()


def test_diffreact_f_consistent_with_stiffness():
    p = assemble_diffreact(StructuredGrid(7, 7))
    u = np.random.default_rng(3).uniform(0.0, 1.0, p.n)
    f = p.apply_f(0.7, u)
    assert np.allclose(spmv(p.stiffness(u), u) - p.rhs(0.7), f, atol=1e-15)
    k = p.stiffness(u).to_dense()
    assert np.abs(k - k.T).max() <= 1e-12 * np.abs(k).max()


def test_diffreact_source_integral():
    p = assemble_diffreact(StructuredGrid(64, 64))
    area = -0.1 * np.pi * 0.1**2
    assert p.rhs(0.0).sum() == pytest.approx(area, rel=5e-3)
    assert DiffReactData().center(0.0) == (0.75, 0.5)


def test_diffreact_clipped_diffusion():
    d, dd = DiffReactData().diffusion(np.array([-0.2, 0.5, 1.3]))
    assert d.tolist() == [0.0, 0.25, 0.0] and dd.tolist() == [0.0, 0.0, 0.0]
    d, _ = DiffReactData(clip_diffusion=False).diffusion(np.array([-0.2]))
    assert d[0] < 0
    with pytest.raises(ValueError):
        DiffReactData(radius=0.0)


def test_diffreact_pipeline_matches_window_one():
    p = assemble_diffreact(StructuredGrid(64, 64))
    from blockstep.tableau import crank_nicolson
    settings = EngineSettings(outer_tolerance=1e-8, max_outer=50,
                              inner=SolveSettings(1e-5, 1000), solver="cg")
    y0 = p.initial_value()
    ref = pipelined_run(p, crank_nicolson(), 0.12, 20, 1, y0, settings)
    for w in (2, 4):
        run = pipelined_run(p, crank_nicolson(), 0.12, 20, w, y0, settings)
        assert np.abs(run.final - ref.final).max() <= 1e-6


# --- van Genuchten -------------------------------------------------------------------

def test_van_genuchten_saturated_and_dry():
    theta, k = van_genuchten(0.0)
    assert float(theta) == 0.396 and float(k) == 4.96e-2
    theta, _ = van_genuchten(-1e6)
    assert abs(float(theta) - 0.131) <= 1e-6
    _, k_eff = van_genuchten(-1e6, VanGenuchtenSoil(conductivity_saturation="effective"))
    assert float(k_eff) <= 1e-6


@pytest.mark.parametrize("psi", [-1.0, -0.3, -5.0, -1e6, 0.5])
def test_van_genuchten_vs_high_precision(psi):
    theta, k = van_genuchten(psi)
    ref = oracles.van_genuchten_mp(psi, 0.396, 0.131, 0.423, 2.06, 4.96e-2)
    assert float(theta) == pytest.approx(ref[0], rel=1e-13)
    assert float(k) == pytest.approx(ref[1], rel=1e-10, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_van_genuchten_monotone(seed):
    rng = np.random.default_rng(seed)
    psi = np.sort(np.concatenate((-10 ** rng.uniform(-4, 4, 1000), rng.uniform(-2, 2, 1000))))
    theta, k = van_genuchten(psi)
    assert np.all(np.diff(theta) >= 0.0)
    order = np.argsort(theta, kind="stable")
    assert np.all(np.diff(k[order]) >= 0.0)


def test_lipschitz_constant():
    psi = np.linspace(-10.0, 0.0, 200_001)
    theta, _ = van_genuchten(psi)
    slope = np.max(np.diff(theta) / np.diff(psi))
    assert slope <= 4.501e-2 * 1.001


def test_soil_validation():
    with pytest.raises(ValueError):
        VanGenuchtenSoil(theta_r=0.5)
    with pytest.raises(ValueError):
        VanGenuchtenSoil(n=1.0)
    with pytest.raises(ValueError):
        VanGenuchtenSoil(conductivity_saturation="other")


# --- Richards ----------------------------------------------------------------------------

def test_richards_boundary_values():
    p = assemble_richards(richards_grid(10, 15))
    g = p.boundary_values
    nt = p.trench.size
    assert np.all(g(0.0)[:nt] == -2.0)
    assert np.allclose(g(1 / 16)[:nt], 0.2)
    assert np.allclose(g(1 / 32)[:nt], -0.9)
    assert np.all(g(0.5)[:nt] == 0.2)
    assert np.allclose(g(0.0)[nt:], 1.0 - p.z[p.water_table])
    assert np.all(p.x[p.trench] <= 1.0) and np.all(p.z[p.trench] == 3.0)
    assert np.all(p.x[p.water_table] == 2.0) and np.all(p.z[p.water_table] <= 1.0)


def test_richards_hydrostatic_equilibrium():
    p = assemble_richards(richards_grid(10, 15))
    psi0 = p.initial_value()
    r = p.apply_f(0.0, psi0)
    assert np.abs(r).max() < 1e-14
    assert np.all(p.lumped_mass[p.dirichlet_dofs] == 0.0)


def test_richards_aspect_checked():
    with pytest.raises(ValueError):
        assemble_richards(StructuredGrid(10, 10, 2.0, 2.0))


def test_richards_one_step_bounds():
    p = assemble_richards(richards_grid(10, 15))
    settings = EngineSettings(outer_tolerance=1e-5, outer_rel_tolerance=1e-5,
                              outer_criterion="increment", max_outer=2000,
                              inner=SolveSettings(1e-8, 2000), solver="cg")
    run = pipelined_run(p, implicit_euler(), 1 / 96, 1, 1, p.initial_value(), settings)
    theta = p.theta(run.final)
    assert np.all(theta >= SOIL.theta_r) and np.all(theta <= SOIL.theta_s)
    assert run.stats.nl_iterations >= 1


# --- manufactured problem and VTK --------------------------------------------------------

def test_manufactured_consistency():
    p = ManufacturedProblem(8)
    t, h = 0.37, 1e-6
    deriv = (p.exact(t + h) - p.exact(t - h)) / (2 * h)
    m, k = p.mass().to_dense(), p.stiffness().to_dense()
    assert np.allclose(m @ deriv + k @ p.exact(t), p.rhs(t), atol=1e-8)
    with pytest.raises(ValueError):
        ManufacturedProblem(1)


def test_vtk_snapshots(tmp_path):
    cd = assemble_convdiff(StructuredGrid(4, 3))
    write_snapshot(tmp_path / "cd.vtk", cd, np.arange(12.0), 0.5)
    text = (tmp_path / "cd.vtk").read_text().splitlines()
    assert text[0].startswith("# vtk DataFile") and "DIMENSIONS 4 3 1" in text
    fe = assemble_diffreact(StructuredGrid(4, 3))
    write_snapshot(tmp_path / "fe.vtk", fe, np.zeros(20))
    assert "DIMENSIONS 5 4 1" in (tmp_path / "fe.vtk").read_text().splitlines()
