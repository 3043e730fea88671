import numpy as np
import pytest

import dgboltz as dg
from dgboltz.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    RunConfig,
    cmd_bench,
    cmd_evaluate,
    cmd_precompute,
    cmd_relax,
    fit_exponent,
    main,
)
from dgboltz.errors import ConfigurationError

SMALL_CONFIG = """
[grid]
domain_min = -3 -3 -3
domain_max = 3 3 3
cells = 5
nodes = 1 1 1

[model]
alpha = 1.0
b0 = 0.07957747154594767

[kernel]
radius = half-domain
n_theta = 8
n_epsilon = 16
form = non-split

[run]
scenario = mach155
dt = 0.01
t_final = 0.02
scheme = rk4
engine = fast
record_every = 1

[output]
directory = {out}
formats = csv bin
"""


def small_cfg(tmp_path, **overrides):
    cfg = RunConfig.from_string(SMALL_CONFIG.format(out=tmp_path / "out"))
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg


def test_config_roundtrip_identity(tmp_path):
    cfg = small_cfg(tmp_path)
    cfg.maxwellians = ((1.5, 0.1, 0.0, -0.2, 0.4), (0.5, 0.0, 0.0, 0.0, 0.9))
    cfg.radius = 2.25
    cfg.bench_m = (3, 5)
    again = RunConfig.from_string(cfg.to_ini())
    assert again == cfg
    # and a second round trip stays identical
    assert RunConfig.from_string(again.to_ini()) == again


def test_config_roundtrip_default_radius(tmp_path):
    cfg = small_cfg(tmp_path)
    assert cfg.radius is None
    assert RunConfig.from_string(cfg.to_ini()).radius is None
    cfg.radius = float("inf")
    assert RunConfig.from_string(cfg.to_ini()).radius == float("inf")


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        RunConfig.from_string("[run]\nengine = warp\n")
    with pytest.raises(ConfigurationError):
        RunConfig.from_string("[kernel]\nform = sideways\n")
    with pytest.raises(ConfigurationError):
        RunConfig.from_string("[grid]\ncells = 0\n")
    with pytest.raises(ConfigurationError):
        RunConfig.from_string("[run]\nmaxwellians = 1.0 0.0\n")


def test_cmd_precompute_writes_deterministic_file(tmp_path, capsys):
    cfg = small_cfg(tmp_path)
    paths = cmd_precompute(cfg)
    out = capsys.readouterr().out
    assert "15625 entries" in out  # 5^6 cell pairs, one (i,i',i'') slab
    blob1 = open(paths[0], "rb").read()
    cmd_precompute(cfg)
    blob2 = open(paths[0], "rb").read()
    assert blob1 == blob2
    loaded = dg.load_kernel(paths[0], dg.VelocityMesh(cfg.grid_spec()))
    assert loaded.form == "non-split"


def test_cmd_precompute_spectral_sidecar(tmp_path):
    cfg = small_cfg(tmp_path, save_spectral=True)
    paths = cmd_precompute(cfg, verbose=False)
    assert len(paths) == 2
    sk = dg.load_spectral_kernel(paths[1], dg.VelocityMesh(cfg.grid_spec()))
    kt = dg.load_kernel(paths[0])
    assert np.allclose(
        sk.values, dg.spectral_transform_kernel(kt).values, atol=1e-12
    )


def test_cmd_precompute_sizing_refusal(tmp_path):
    cfg = small_cfg(tmp_path, cells=15, memory_cap_gb=0.001)
    with pytest.raises(dg.errors.SizingError):
        cmd_precompute(cfg, verbose=False)


def test_cmd_evaluate_modes_and_diffs(tmp_path, capsys):
    cfg = small_cfg(tmp_path)
    results, diffs = cmd_evaluate(cfg, ["fast:non-split", "direct:non-split"])
    out_dir = tmp_path / "out"
    assert (out_dir / "evaluate-report.csv").exists()
    assert (out_dir / "slice-fast-non-split.csv").exists()
    # circular-vs-zero-outside differences stay small on the contained field
    (l1, linf) = diffs[("fast:non-split", "direct:non-split")]
    scale = np.abs(results["fast:non-split"].values).max()
    assert linf < 1e-4 * scale + 1e-12


def test_cmd_evaluate_unknown_mode(tmp_path):
    cfg = small_cfg(tmp_path)
    with pytest.raises(ConfigurationError):
        cmd_evaluate(cfg, ["warp:non-split"])
    with pytest.raises(ConfigurationError):
        cmd_evaluate(cfg, [])


def test_cmd_relax_outputs(tmp_path):
    cfg = small_cfg(tmp_path)
    hist, final = cmd_relax(cfg, verbose=False)
    out_dir = tmp_path / "out"
    assert (out_dir / "history.csv").exists()
    assert (out_dir / "final-field.bin").exists()
    assert (out_dir / "relax-meta.json").exists()
    snap = dg.distribution.read_field_binary(out_dir / "final-field.bin")
    assert np.array_equal(snap.values, final.values)


def test_cmd_relax_zero_duration(tmp_path):
    cfg = small_cfg(tmp_path, t_final=0.0)
    hist, final = cmd_relax(cfg, verbose=False)
    rows = (tmp_path / "out" / "history.csv").read_text().strip().splitlines()
    assert len(rows) == 2  # header + initial row only


def test_cmd_relax_deterministic_history(tmp_path):
    cfg = small_cfg(tmp_path)
    cmd_relax(cfg, verbose=False)
    first = (tmp_path / "out" / "history.csv").read_bytes()
    cmd_relax(cfg, verbose=False)
    second = (tmp_path / "out" / "history.csv").read_bytes()
    assert first == second


def test_cmd_bench_small(tmp_path):
    cfg = small_cfg(tmp_path, bench_m=(3, 4), bench_min_time=0.02, bench_max_reps=3)
    rows, exp_fast, exp_direct = cmd_bench(cfg, verbose=False)
    assert len(rows) == 2
    table = (tmp_path / "out" / "bench.csv").read_text()
    assert table.startswith("M, t_fast_s")
    assert np.isfinite(exp_fast) and np.isfinite(exp_direct)
    with pytest.raises(ConfigurationError):
        cmd_bench(cfg, m_list=[5])


def test_fit_exponent():
    m = [5, 9, 15]
    t = [1e-3 * (mi / 5) ** 6 for mi in m]
    assert fit_exponent(m, t) == pytest.approx(6.0, abs=1e-12)


def test_main_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text(SMALL_CONFIG.format(out=tmp_path / "out"))
    assert main(["--config", str(cfg_path), "precompute-kernel"]) == EXIT_OK
    capsys.readouterr()
    # missing config file
    assert main(["--config", str(tmp_path / "nope.ini"), "relax"]) == EXIT_CONFIG
    # invalid config value
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nengine = warp\n")
    assert main(["--config", str(bad), "relax"]) == EXIT_CONFIG
    # corrupt kernel container -> I/O error
    junk = tmp_path / "junk.bgka"
    junk.write_bytes(b"JUNKJUNKJUNK")
    assert (
        main(["--config", str(cfg_path), "evaluate", "--kernel-file", str(junk)])
        == EXIT_IO
    )
    capsys.readouterr()


def test_main_incompatible_kernel_is_config_error(tmp_path, capsys):
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text(SMALL_CONFIG.format(out=tmp_path / "out"))
    assert main(["--config", str(cfg_path), "precompute-kernel"]) == EXIT_OK
    kfile = tmp_path / "out" / "kernel-non-split-M5.bgka"
    assert kfile.exists()
    other = tmp_path / "c7.ini"
    other.write_text(
        SMALL_CONFIG.format(out=tmp_path / "out7").replace("cells = 5", "cells = 7")
    )
    code = main(
        ["--config", str(other), "evaluate", "--kernel-file", str(kfile)]
    )
    assert code == EXIT_CONFIG
    capsys.readouterr()


def test_main_out_override(tmp_path):
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text(SMALL_CONFIG.format(out=tmp_path / "ignored"))
    dest = tmp_path / "elsewhere"
    assert (
        main(["--config", str(cfg_path), "--out", str(dest), "precompute-kernel"])
        == EXIT_OK
    )
    assert any(dest.glob("*.bgka"))
