import numpy as np
import pytest

import dgboltz as dg
from dgboltz.distribution import (
    node_quadrature_weights,
    raw_moments,
    read_field_binary,
    write_field_binary,
    write_field_csv,
)
from dgboltz.errors import ConfigurationError, DegenerateFieldError

from conftest import MACH155, make_mesh


def test_maxwellian_point_values():
    p = dg.MaxwellianParams(1.0, (0.0, 0.0, 0.0), 1.0)
    assert dg.maxwellian_eval(p, np.zeros(3)) == pytest.approx(np.pi**-1.5, rel=1e-14)
    # peak at the bulk velocity
    p2 = dg.MaxwellianParams(2.0, (0.5, -0.2, 0.1), 0.7)
    rng = np.random.default_rng(0)
    samples = rng.normal(size=(100, 3))
    peak = dg.maxwellian_eval(p2, np.array(p2.bulk_velocity))
    assert np.all(dg.maxwellian_eval(p2, samples) <= peak)


def test_maxwellian_density_against_quadrature_oracle():
    # independent high-order tensor Gauss rule over +-6 sqrt(T)
    p = dg.MaxwellianParams(1.7, (0.3, -0.1, 0.2), 0.6)
    x, w = np.polynomial.legendre.leggauss(48)
    half = 6.0 * np.sqrt(p.temperature)
    axes = [u + half * x for u in p.bulk_velocity]
    wts = [half * w] * 3
    P = np.stack(np.meshgrid(axes[0], axes[1], axes[2], indexing="ij"), axis=-1)
    W = np.einsum("i,j,k->ijk", wts[0], wts[1], wts[2])
    integral = float(np.sum(W * dg.maxwellian_eval(p, P)))
    assert integral == pytest.approx(p.density, rel=1e-6)


def test_maxwellian_params_validation():
    with pytest.raises(DegenerateFieldError):
        dg.MaxwellianParams(0.0, (0, 0, 0), 1.0)
    with pytest.raises(DegenerateFieldError):
        dg.MaxwellianParams(1.0, (0, 0, 0), -0.1)


def test_sample_field_basics():
    mesh = make_mesh(3, (2, 1, 1))
    zero = dg.sample_field(mesh, lambda v: np.zeros(v.shape[:-1]))
    assert not zero.values.any()
    # sampling a basis function puts a single 1 at its own node
    i0, j0 = 1, (0, 2, 1)
    f = dg.sample_field(mesh, lambda v: mesh.basis_eval(i0, j0, v))
    expected = np.zeros_like(f.values)
    expected[i0, j0[0], j0[1], j0[2]] = 1.0
    assert np.allclose(f.values, expected, atol=1e-12)


def test_sample_field_rejects_nonfinite():
    mesh = make_mesh(3)
    with pytest.raises(DegenerateFieldError):
        dg.sample_field(mesh, lambda v: np.full(v.shape[:-1], np.nan))


def test_mach155_mixture_density():
    mesh = make_mesh(15)
    f = dg.sample_maxwellian_sum(mesh, MACH155)
    m = dg.moments(f)
    assert m.density == pytest.approx(4.4722, rel=1e-6)


def test_moment_convergence_over_M():
    target_n = 4.4722
    # analytic mixture temperature
    n1, n2 = MACH155[0].density, MACH155[1].density
    u1, u2 = MACH155[0].bulk_velocity[0], MACH155[1].bulk_velocity[0]
    ubar = (n1 * u1 + n2 * u2) / (n1 + n2)
    t_mix = (
        n1 * (MACH155[0].temperature + (2.0 / 3.0) * (u1 - ubar) ** 2)
        + n2 * (MACH155[1].temperature + (2.0 / 3.0) * (u2 - ubar) ** 2)
    ) / (n1 + n2)
    errs_n, errs_t = [], []
    for M in (9, 15, 21):
        f = dg.sample_maxwellian_sum(make_mesh(M), MACH155)
        m = dg.moments(f)
        errs_n.append(abs(m.density - target_n) / target_n)
        errs_t.append(abs(m.temperature - t_mix) / t_mix)
    assert errs_n[0] > errs_n[1] > errs_n[2]
    assert errs_t[0] > errs_t[1] > errs_t[2]


def test_moments_of_sampled_maxwellian():
    mesh = make_mesh(9)
    p = dg.MaxwellianParams(2.0, (0.3, 0.0, 0.0), 0.5)
    m = dg.moments(dg.sample_field(mesh, lambda v: dg.maxwellian_eval(p, v)))
    assert m.density == pytest.approx(2.0, rel=1e-4)
    assert np.allclose(m.bulk_velocity, [0.3, 0, 0], atol=1e-4)
    assert m.temperature == pytest.approx(0.5, rel=1e-3)
    assert np.allclose(m.directional_temperatures, 0.5, rtol=1e-3)


def test_moments_degenerate_and_linearity():
    mesh = make_mesh(3)
    zero = dg.DistributionField(mesh, np.zeros((1, 3, 3, 3)))
    with pytest.raises(DegenerateFieldError):
        dg.moments(zero)
    rng = np.random.default_rng(5)
    f = dg.DistributionField(mesh, rng.random((1, 3, 3, 3)))
    g = dg.DistributionField(mesh, rng.random((1, 3, 3, 3)))
    a, b = 2.5, -1.25
    combo = raw_moments(a * f + b * g)
    fa, fb = raw_moments(f), raw_moments(g)
    assert combo[0] == pytest.approx(a * fa[0] + b * fb[0], rel=1e-12)
    assert np.allclose(combo[1], a * fa[1] + b * fb[1], rtol=1e-12, atol=1e-14)
    assert combo[2] == pytest.approx(a * fa[2] + b * fb[2], rel=1e-12)


def test_directional_moments():
    mesh = make_mesh(9)
    p = dg.MaxwellianParams(2.0, (0.3, -0.1, 0.0), 0.5)
    f = dg.sample_field(mesh, lambda v: dg.maxwellian_eval(p, v))
    m = dg.moments(f)
    # odd central moment of an isotropic Maxwellian vanishes
    assert abs(dg.directional_moment(f, 0, 3)) < 1e-4
    # p = 2 centered equals n T / 2 per axis
    for axis in range(3):
        assert dg.directional_moment(f, axis, 2) == pytest.approx(
            0.5 * 2.0 * 0.5, rel=1e-3
        )
    # uncentered minus centered equals n ubar_d^2 (algebraic identity)
    for axis in range(3):
        un = dg.directional_moment(f, axis, 2, centered=False)
        ce = dg.directional_moment(f, axis, 2, centered=True)
        assert un - ce == pytest.approx(
            m.density * m.bulk_velocity[axis] ** 2, abs=1e-12
        )
    # sum over axes of p=2 equals (3/2) n T (identity of definitions)
    total = sum(dg.directional_moment(f, a, 2) for a in range(3))
    assert total == pytest.approx(1.5 * m.density * m.temperature, rel=1e-10)
    with pytest.raises(ConfigurationError):
        dg.directional_moment(f, 3, 2)


def test_macro_micro_decompose():
    mesh = make_mesh(9, (2, 2, 2))
    p = dg.MaxwellianParams(2.0, (0.3, 0.0, 0.0), 0.5)
    f = dg.sample_field(mesh, lambda v: dg.maxwellian_eval(p, v))
    params, fm, delta = dg.macro_micro_decompose(f)
    # near-equilibrium input: remainder small, recombination bitwise
    assert np.abs(delta.values).max() < 1e-3 * np.abs(f.values).max()
    assert np.array_equal((fm + delta).values, f.values)
    # remainder carries (quadrature-level) zero raw moments
    d0, dm, de = raw_moments(delta)
    assert abs(d0) < 1e-4
    assert np.all(np.abs(dm) < 1e-4)
    assert abs(de) < 1e-3
    # decomposition is idempotent in the parameters
    params2, _, _ = dg.macro_micro_decompose(fm + delta)
    assert params2.density == pytest.approx(params.density, rel=1e-12)
    assert params2.temperature == pytest.approx(params.temperature, rel=1e-12)
    assert np.allclose(params2.bulk_velocity, params.bulk_velocity, atol=1e-12)


def test_macro_micro_decompose_generic_field_ulp():
    # far-tail nodes may round f - f_M; recombination is exact to 1 ulp
    mesh = make_mesh(15)
    f = dg.sample_maxwellian_sum(mesh, MACH155)
    _, fm, delta = dg.macro_micro_decompose(f)
    recon = (fm + delta).values
    tol = np.finfo(float).eps * np.maximum(np.abs(f.values), np.abs(fm.values))
    assert np.all(np.abs(recon - f.values) <= tol)


def test_delta_maxwellian_error_shrinks_with_resolution():
    p = dg.MaxwellianParams(1.5, (0.2, 0.0, 0.0), 0.5)
    errs = []
    for M in (9, 15):
        mesh = make_mesh(M)
        f = dg.sample_field(mesh, lambda v: dg.maxwellian_eval(p, v))
        _, _, delta = dg.macro_micro_decompose(f)
        errs.append(np.abs(delta.values).max() / np.abs(f.values).max())
    assert errs[1] < errs[0]


def test_field_binary_roundtrip(tmp_path):
    mesh = make_mesh(5, (2, 1, 1))
    rng = np.random.default_rng(11)
    f = dg.DistributionField(mesh, rng.normal(size=(2, 5, 5, 5)))
    path = tmp_path / "field.bin"
    write_field_binary(f, path)
    g = read_field_binary(path)
    assert np.array_equal(g.values, f.values)
    assert g.mesh.fingerprint == f.mesh.fingerprint
    # truncated file is rejected
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(raw[:40])
    with pytest.raises(ConfigurationError):
        read_field_binary(tmp_path / "bad.bin")


def test_field_csv_export(tmp_path):
    mesh = make_mesh(3)
    f = dg.sample_maxwellian_sum(mesh, [dg.MaxwellianParams(1.0, (0, 0, 0), 0.5)])
    path = tmp_path / "field.csv"
    write_field_csv(f, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "u,v,w,f"
    assert len(rows) == 1 + mesh.spec.total_dof
    u, v, w, val = (float(x) for x in rows[1].split(","))
    assert val == pytest.approx(
        dg.maxwellian_eval(dg.MaxwellianParams(1.0, (0, 0, 0), 0.5), np.array([u, v, w])),
        rel=1e-15,
    )


def test_quadrature_weights_sum_to_volume():
    mesh = make_mesh(4, (3, 2, 1))
    w = node_quadrature_weights(mesh)
    total = float(w.sum()) * mesh.cells_per_dim**3
    domain_vol = np.prod(np.asarray(mesh.domain_max) - np.asarray(mesh.domain_min))
    assert total == pytest.approx(domain_vol, rel=1e-13)
