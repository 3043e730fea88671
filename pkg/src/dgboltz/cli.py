"""Config-driven command line driver.

Subcommands: precompute-kernel, evaluate, relax, bench.  Runs are
described by an INI-style key-value config (blocks: grid, model, kernel,
run, output, bench) plus flag overrides.  Exit codes: 0 success,
2 configuration error, 3 numeric failure, 4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import sys
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import convolution, distribution, kernel, solver
from .distribution import (
    DistributionField,
    MaxwellianParams,
    moments,
    sample_maxwellian_sum,
    write_field_binary,
    write_field_csv,
)
from .errors import (
    ConfigurationError,
    DegenerateFieldError,
    DGBoltzError,
    DivergenceError,
    IncompatibleGridError,
    KernelFormatError,
    NumericalConsistencyError,
    SizingError,
)
from .grid import GridSpec, VelocityMesh
from .kernel import (
    FORM_GAIN,
    FORM_NONSPLIT,
    InteractionModel,
    load_kernel,
    precompute_kernel,
    save_kernel,
    sphere_quadrature,
)
from .solver import (
    FORM_SPLIT,
    CollisionEngine,
    RelaxationConfig,
    integrate,
    mean_free_time_estimate,
    output_moments,
    preset_scenario,
    rhs_pairs,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


@dataclass
class RunConfig:
    """Parsed configuration; all fields are plain python values."""

    domain_min: tuple = (-3.0, -3.0, -3.0)
    domain_max: tuple = (3.0, 3.0, 3.0)
    cells: int = 9
    nodes: tuple = (1, 1, 1)
    alpha: float = 1.0
    b0: float = 1.0 / (4.0 * np.pi)
    radius: float | None = None  # None -> half-domain default
    n_theta: int = 8
    n_epsilon: int = 16
    form: str = FORM_NONSPLIT
    memory_cap_gb: float = 3.0
    save_spectral: bool = False
    scenario: str = "mach155"
    maxwellians: tuple = ()  # ((n, ux, uy, uz, T), ...) overrides scenario
    dt: float = 0.01
    t_final: float = 1.0
    scheme: str = "rk4"
    engine: str = "fast"
    record_every: int = 1
    decompose: bool = True
    conserve: bool = False
    out_dir: str = "out"
    formats: tuple = ("csv", "bin")
    bench_m: tuple = (5, 9, 15)
    bench_min_time: float = 0.3
    bench_max_reps: int = 50

    # -- construction -------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigurationError(f"config file {path} not found or unreadable")
        return cls._from_parser(parser)

    @classmethod
    def from_string(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        return cls._from_parser(parser)

    @classmethod
    def _from_parser(cls, parser) -> "RunConfig":
        cfg = cls()
        try:
            if parser.has_section("grid"):
                g = parser["grid"]
                if "domain_min" in g:
                    cfg.domain_min = _triple(g["domain_min"], float)
                if "domain_max" in g:
                    cfg.domain_max = _triple(g["domain_max"], float)
                if "cells" in g:
                    cfg.cells = int(g["cells"])
                if "nodes" in g:
                    cfg.nodes = _triple(g["nodes"], int)
            if parser.has_section("model"):
                mdl = parser["model"]
                cfg.alpha = mdl.getfloat("alpha", cfg.alpha)
                cfg.b0 = mdl.getfloat("b0", cfg.b0)
            if parser.has_section("kernel"):
                k = parser["kernel"]
                if "radius" in k:
                    raw = k["radius"].strip().lower()
                    if raw in ("half-domain", "default"):
                        cfg.radius = None
                    elif raw in ("inf", "infinity"):
                        cfg.radius = float("inf")
                    else:
                        cfg.radius = float(raw)
                cfg.n_theta = k.getint("n_theta", cfg.n_theta)
                cfg.n_epsilon = k.getint("n_epsilon", cfg.n_epsilon)
                cfg.form = k.get("form", cfg.form).strip()
                cfg.memory_cap_gb = k.getfloat("memory_cap_gb", cfg.memory_cap_gb)
                cfg.save_spectral = k.getboolean("save_spectral", cfg.save_spectral)
            if parser.has_section("run"):
                r = parser["run"]
                cfg.scenario = r.get("scenario", cfg.scenario).strip()
                if "maxwellians" in r:
                    rows = []
                    for line in r["maxwellians"].strip().splitlines():
                        vals = [float(x) for x in line.split()]
                        if len(vals) != 5:
                            raise ConfigurationError(
                                "each maxwellians line needs: n ux uy uz T"
                            )
                        rows.append(tuple(vals))
                    cfg.maxwellians = tuple(rows)
                cfg.dt = r.getfloat("dt", cfg.dt)
                cfg.t_final = r.getfloat("t_final", cfg.t_final)
                cfg.scheme = r.get("scheme", cfg.scheme).strip()
                cfg.engine = r.get("engine", cfg.engine).strip()
                cfg.record_every = r.getint("record_every", cfg.record_every)
                cfg.decompose = r.getboolean("decompose", cfg.decompose)
                cfg.conserve = r.getboolean("conserve", cfg.conserve)
            if parser.has_section("output"):
                o = parser["output"]
                cfg.out_dir = o.get("directory", cfg.out_dir).strip()
                if "formats" in o:
                    cfg.formats = tuple(o["formats"].split())
            if parser.has_section("bench"):
                b = parser["bench"]
                if "m_list" in b:
                    cfg.bench_m = tuple(int(x) for x in b["m_list"].split())
                cfg.bench_min_time = b.getfloat("min_time", cfg.bench_min_time)
                cfg.bench_max_reps = b.getint("max_reps", cfg.bench_max_reps)
        except (ValueError, KeyError) as exc:
            raise ConfigurationError(f"bad config value: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self):
        if self.form not in (FORM_NONSPLIT, FORM_SPLIT):
            raise ConfigurationError(f"kernel form must be non-split or split, got {self.form!r}")
        if self.engine not in ("fast", "direct"):
            raise ConfigurationError(f"engine must be fast or direct, got {self.engine!r}")
        if self.scheme not in ("euler", "rk4"):
            raise ConfigurationError(f"scheme must be euler or rk4, got {self.scheme!r}")
        if self.cells < 1:
            raise ConfigurationError("cells must be >= 1")
        if self.dt <= 0 or self.t_final < 0:
            raise ConfigurationError("need dt > 0 and t_final >= 0")
        # constructing these validates numeric ranges before any allocation
        self.grid_spec()
        InteractionModel(self.alpha, self.b0)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser["grid"] = {
            "domain_min": " ".join(repr(x) for x in self.domain_min),
            "domain_max": " ".join(repr(x) for x in self.domain_max),
            "cells": str(self.cells),
            "nodes": " ".join(str(x) for x in self.nodes),
        }
        parser["model"] = {"alpha": repr(self.alpha), "b0": repr(self.b0)}
        parser["kernel"] = {
            "radius": "half-domain" if self.radius is None else repr(self.radius),
            "n_theta": str(self.n_theta),
            "n_epsilon": str(self.n_epsilon),
            "form": self.form,
            "memory_cap_gb": repr(self.memory_cap_gb),
            "save_spectral": str(self.save_spectral).lower(),
        }
        run = {
            "scenario": self.scenario,
            "dt": repr(self.dt),
            "t_final": repr(self.t_final),
            "scheme": self.scheme,
            "engine": self.engine,
            "record_every": str(self.record_every),
            "decompose": str(self.decompose).lower(),
            "conserve": str(self.conserve).lower(),
        }
        if self.maxwellians:
            run["maxwellians"] = "\n" + "\n".join(
                " ".join(repr(v) for v in row) for row in self.maxwellians
            )
        parser["run"] = run
        parser["output"] = {
            "directory": self.out_dir,
            "formats": " ".join(self.formats),
        }
        parser["bench"] = {
            "m_list": " ".join(str(m) for m in self.bench_m),
            "min_time": repr(self.bench_min_time),
            "max_reps": str(self.bench_max_reps),
        }
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    # -- derived objects ----------------------------------------------

    def grid_spec(self, cells: int | None = None) -> GridSpec:
        return GridSpec(
            self.domain_min, self.domain_max, cells or self.cells, self.nodes
        )

    def model(self) -> InteractionModel:
        return InteractionModel(self.alpha, self.b0)

    def quadrature(self):
        return sphere_quadrature(self.n_theta, self.n_epsilon)

    def memory_cap(self) -> int:
        return int(self.memory_cap_gb * 2**30)

    def build_field(self, mesh: VelocityMesh, seed: int = 0) -> DistributionField:
        if self.maxwellians:
            params = [MaxwellianParams(r[0], r[1:4], r[4]) for r in self.maxwellians]
            return sample_maxwellian_sum(mesh, params)
        if self.scenario == "random":
            rng = np.random.default_rng(seed)
            shape = (mesh.nodes_per_cell,) + (mesh.cells_per_dim,) * 3
            return DistributionField(mesh, rng.random(shape), copy=False)
        preset = preset_scenario(self.scenario)
        return preset.build_field(mesh)


def _triple(text, cast):
    parts = text.split()
    if len(parts) != 3:
        raise ConfigurationError(f"expected 3 values, got {text!r}")
    return tuple(cast(p) for p in parts)


# ----------------------------------------------------------------------
# subcommands


def cmd_precompute(cfg: RunConfig, out_path=None, verbose: bool = True):
    """Write the kernel tensor file (and optionally its spectral image)."""
    mesh = VelocityMesh(cfg.grid_spec())
    kernel_form = FORM_GAIN if cfg.form == FORM_SPLIT else FORM_NONSPLIT
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if out_path is None:
        out_path = out_dir / f"kernel-{kernel_form}-M{cfg.cells}.bgka"
    t0 = time.perf_counter()
    tensor = precompute_kernel(
        mesh, cfg.model(), cfg.quadrature(), cfg.radius, kernel_form,
        cfg.memory_cap(),
    )
    elapsed = time.perf_counter() - t0
    save_kernel(tensor, out_path)
    written = [str(out_path)]
    if cfg.save_spectral:
        spath = Path(str(out_path) + ".spec")
        sk = convolution.spectral_transform_kernel(tensor, cfg.memory_cap())
        convolution.save_spectral_kernel(sk, spath)
        written.append(str(spath))
    if verbose:
        print(
            f"{tensor.values.size} entries, nonzero fraction "
            f"{tensor.nonzero_fraction:.4f}, wall time {elapsed:.2f} s"
        )
        for w in written:
            print(f"wrote {w}")
    return written


def _parse_mode(mode: str):
    try:
        engine, form = mode.split(":", 1)
    except ValueError:
        raise ConfigurationError(
            f"mode {mode!r} must look like ENGINE:FORM, e.g. fast:non-split"
        )
    if engine not in ("fast", "direct"):
        raise ConfigurationError(f"unknown engine in mode {mode!r}")
    if form not in (FORM_NONSPLIT, FORM_SPLIT):
        raise ConfigurationError(f"unknown form in mode {mode!r}")
    return engine, form


def cmd_evaluate(cfg: RunConfig, modes, kernel_path=None, seed: int = 0,
                 verbose: bool = True):
    """Evaluate the collision operator in the requested modes.

    Emits a per-mode moment table, pairwise L1/Linf differences, and a
    mid-plane slice CSV per mode.
    """
    modes = [m.strip() for m in modes if m.strip()]
    if not modes:
        raise ConfigurationError("no evaluation modes given")
    parsed = [_parse_mode(m) for m in modes]
    mesh = VelocityMesh(cfg.grid_spec())
    fld = cfg.build_field(mesh, seed)
    ref = moments(fld)
    model, quad = cfg.model(), cfg.quadrature()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tensors = {}
    if kernel_path is not None:
        loaded = load_kernel(kernel_path, mesh)
        tensors[loaded.form] = loaded

    def tensor_for(form):
        kform = FORM_GAIN if form == FORM_SPLIT else FORM_NONSPLIT
        if kform not in tensors:
            tensors[kform] = precompute_kernel(
                mesh, model, quad, cfg.radius, kform, cfg.memory_cap()
            )
        return tensors[kform]

    engines = {}
    results = {}
    for engine_name, form in parsed:
        key = f"{engine_name}:{form}"
        if key in engines:
            continue
        tensor = tensor_for(form)
        spectral = (
            convolution.spectral_transform_kernel(tensor, cfg.memory_cap())
            if engine_name == "fast"
            else None
        )
        freq = (
            kernel.CollisionFrequencyWeights(mesh, model, cfg.memory_cap())
            if form == FORM_SPLIT
            else None
        )
        eng = CollisionEngine(mesh, form, engine_name, tensor, spectral, freq)
        out = eng.evaluate_pairs(rhs_pairs(fld, cfg.decompose))
        engines[key] = eng
        results[key] = out

    report_lines = ["mode, mass, momentum_u, momentum_v, momentum_w, energy, temperature_rate"]
    for key, out in results.items():
        om = output_moments(out, ref)
        report_lines.append(
            f"{key}, {om['mass']:.10e}, "
            + ", ".join(f"{x:.10e}" for x in om["momentum"])
            + f", {om['energy']:.10e}, {om['temperature_rate']:.10e}"
        )
        _write_slice_csv(out, out_dir / f"slice-{key.replace(':', '-')}.csv")
    keys = list(results)
    pair_lines = ["mode_a, mode_b, L1, Linf"]
    diffs = {}
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            da = results[keys[a]].values
            db = results[keys[b]].values
            l1 = float(np.sum(np.abs(da - db)))
            linf = float(np.max(np.abs(da - db)))
            diffs[(keys[a], keys[b])] = (l1, linf)
            pair_lines.append(f"{keys[a]}, {keys[b]}, {l1:.10e}, {linf:.10e}")
    report = "\n".join(report_lines + [""] + pair_lines) + "\n"
    (out_dir / "evaluate-report.csv").write_text(report)
    if verbose:
        print(report, end="")
    return results, diffs


def _write_slice_csv(out, path):
    """Mid-plane (w = const) slice of the first local node's projections."""
    mesh = out.mesh
    M = mesh.cells_per_dim
    mid = M // 2
    coords = mesh.node_coords()
    with open(path, "w") as fh:
        fh.write("u, v, I\n")
        for ju in range(M):
            for jv in range(M):
                u, v = coords[0, ju, jv, mid, 0], coords[0, ju, jv, mid, 1]
                fh.write(f"{u:.17e}, {v:.17e}, {out.values[0, ju, jv, mid]:.17e}\n")


def cmd_relax(cfg: RunConfig, kernel_path=None, verbose: bool = True):
    """Run the homogeneous relaxation; writes history CSV + snapshots."""
    mesh = VelocityMesh(cfg.grid_spec())
    fld = cfg.build_field(mesh)
    model, quad = cfg.model(), cfg.quadrature()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if kernel_path is not None:
        tensor = load_kernel(kernel_path, mesh)
        expected = FORM_GAIN if cfg.form == FORM_SPLIT else FORM_NONSPLIT
        if tensor.form != expected:
            raise ConfigurationError(
                f"kernel file holds {tensor.form!r}, config wants {expected!r}"
            )
        spectral = (
            convolution.spectral_transform_kernel(tensor, cfg.memory_cap())
            if cfg.engine == "fast"
            else None
        )
        freq = (
            kernel.CollisionFrequencyWeights(mesh, model, cfg.memory_cap())
            if cfg.form == FORM_SPLIT
            else None
        )
        engine = CollisionEngine(mesh, cfg.form, cfg.engine, tensor, spectral, freq)
    else:
        engine = CollisionEngine.build(
            mesh, model, quad, cfg.radius, cfg.form, cfg.engine, cfg.memory_cap()
        )

    rc = RelaxationConfig(
        cfg.dt, cfg.t_final, cfg.scheme, cfg.record_every, cfg.decompose, cfg.conserve
    )
    m0 = moments(fld)
    history_path = out_dir / "history.csv"
    try:
        history, final = integrate(fld, rc, engine)
    except DivergenceError as exc:
        snap = out_dir / "last-good.bin"
        if getattr(exc, "last_field", None) is not None:
            write_field_binary(exc.last_field, snap)
            exc.snapshot_path = str(snap)
            if verbose:
                print(f"diverged at step {exc.step}; last good state in {snap}")
        raise
    history.to_csv(history_path)
    snapshot = None
    if "bin" in cfg.formats:
        snapshot = out_dir / "final-field.bin"
        write_field_binary(final, snapshot)
    if "csv" in cfg.formats:
        write_field_csv(final, out_dir / "final-field.csv")
    meta = {
        "domain_min": list(cfg.domain_min),
        "domain_max": list(cfg.domain_max),
        "cells": cfg.cells,
        "nodes": list(cfg.nodes),
        "dt": cfg.dt,
        "t_final": cfg.t_final,
        "scheme": cfg.scheme,
        "engine": cfg.engine,
        "form": cfg.form,
        "decompose": cfg.decompose,
        "kernel_fingerprint": mesh.fingerprint,
        "mean_free_time_estimate": mean_free_time_estimate(m0, model),
    }
    (out_dir / "relax-meta.json").write_text(json.dumps(meta, indent=2))
    if verbose:
        mlast = history.moment_sets[-1]
        print(
            f"{len(history.times)} records to {history_path}; final T_dir = "
            + " ".join(f"{t:.5f}" for t in mlast.directional_temperatures)
        )
    return history, final


def _best_time(fn, min_time, max_reps):
    fn()  # warm-up (JIT, caches) excluded from timing
    best = np.inf
    reps = 0
    t0 = time.perf_counter()
    while reps < 1 or (time.perf_counter() - t0 < min_time and reps < max_reps):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
        reps += 1
    return best


def fit_exponent(m_values, times):
    """Least-squares slope of log t against log M."""
    lm = np.log(np.asarray(m_values, dtype=float))
    lt = np.log(np.asarray(times, dtype=float))
    return float(np.polyfit(lm, lt, 1)[0])


def cmd_bench(cfg: RunConfig, m_list=None, seed: int = 0, verbose: bool = True):
    """Time both engines per M; kernel precompute is excluded from timing.

    Consecutive-pair exponents use alpha = ln(t1/t2) / ln(M1/M2); the
    summary row is the least-squares fit over the whole list.
    """
    m_list = tuple(m_list or cfg.bench_m)
    if len(m_list) < 2:
        raise ConfigurationError("bench needs at least two M values")
    rows = []
    for M in m_list:
        mesh = VelocityMesh(cfg.grid_spec(cells=M))
        tensor = precompute_kernel(
            mesh, cfg.model(), cfg.quadrature(), cfg.radius, FORM_NONSPLIT,
            cfg.memory_cap(),
        )
        spectral = convolution.spectral_transform_kernel(tensor, cfg.memory_cap())
        fld = cfg.build_field(mesh, seed)
        t_fast = _best_time(
            lambda: convolution.fast_convolve(fld, spectral),
            cfg.bench_min_time, cfg.bench_max_reps,
        )
        t_direct = _best_time(
            lambda: convolution.direct_convolve(fld, tensor, "zero-outside"),
            cfg.bench_min_time, max_reps=3,
        )
        rows.append((M, t_fast, t_direct))
        del tensor, spectral

    lines = ["M, t_fast_s, alpha_fast, t_direct_s, alpha_direct, speedup"]
    prev = None
    for M, tf, td in rows:
        af = ad = ""
        if prev is not None:
            af = f"{np.log(tf / prev[1]) / np.log(M / prev[0]):.2f}"
            ad = f"{np.log(td / prev[2]) / np.log(M / prev[0]):.2f}"
        lines.append(f"{M}, {tf:.6e}, {af}, {td:.6e}, {ad}, {td / tf:.1f}")
        prev = (M, tf, td)
    exp_fast = fit_exponent([r[0] for r in rows], [r[1] for r in rows])
    exp_direct = fit_exponent([r[0] for r in rows], [r[2] for r in rows])
    lines.append(f"fit, , {exp_fast:.2f}, , {exp_direct:.2f}, ")
    table = "\n".join(lines) + "\n"
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.csv").write_text(table)
    if verbose:
        print(table, end="")
    return rows, exp_fast, exp_direct


# ----------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dgboltz",
        description="Collision-operator precomputation, evaluation and relaxation runs",
    )
    parser.add_argument("--config", type=str, default=None, help="INI config file")
    parser.add_argument("--threads", type=int, default=1, help="numba thread count")
    parser.add_argument("--seed", type=int, default=0, help="seed for random fields")
    parser.add_argument("--out", type=str, default=None, help="output directory override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute-kernel", help="precompute and store the kernel tensor")
    p.add_argument("--kernel-file", type=str, default=None)

    p = sub.add_parser("evaluate", help="evaluate the collision operator")
    p.add_argument(
        "--modes",
        type=str,
        default="fast:non-split",
        help="comma list of ENGINE:FORM, e.g. fast:non-split,direct:split",
    )
    p.add_argument("--kernel-file", type=str, default=None)

    p = sub.add_parser("relax", help="run the homogeneous relaxation")
    p.add_argument("--kernel-file", type=str, default=None)

    p = sub.add_parser("bench", help="time both engines across M values")
    p.add_argument("--M", type=int, nargs="*", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads > 1:
            import numba

            numba.set_num_threads(args.threads)
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        if args.out:
            cfg.out_dir = args.out
        if args.command == "precompute-kernel":
            cmd_precompute(cfg, args.kernel_file)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.modes.split(","), args.kernel_file, args.seed)
        elif args.command == "relax":
            cmd_relax(cfg, args.kernel_file)
        elif args.command == "bench":
            cmd_bench(cfg, args.M, args.seed)
        return EXIT_OK
    except (ConfigurationError, IncompatibleGridError, SizingError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateFieldError, NumericalConsistencyError, DivergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KernelFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
