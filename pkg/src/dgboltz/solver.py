"""Spatially homogeneous relaxation driven by the discrete collision operator.

The nodal ODE system is df_{i;j}/dt = (8 / (omega_i dV)) * I_{i;j}.  By
default the right side is assembled from the macro-micro decomposed
bilinear terms f_M x df + df x f_M + df x df (the equilibrium self-term
is dropped: the collision integral of a Maxwellian is zero), which keeps
the conserved moments accurate over long runs.  The split form evaluates
the gain tensor the same way and subtracts the pointwise loss
f * phi * nu[f] with the collision frequency nu from the dense
|g|^alpha table.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .convolution import (
    CollisionOutput,
    SpectralKernel,
    direct_convolve_pairs,
    fast_convolve_pairs,
    spectral_transform_kernel,
)
from .distribution import (
    DistributionField,
    MaxwellianParams,
    MomentSet,
    macro_micro_decompose,
    moments,
    node_quadrature_weights,
    raw_moments,
    sample_maxwellian_sum,
)
from .errors import ConfigurationError, DGBoltzError, DivergenceError
from .grid import GridSpec, VelocityMesh
from .kernel import (
    FORM_GAIN,
    FORM_NONSPLIT,
    CollisionFrequencyWeights,
    InteractionModel,
    KernelTensor,
    SphereQuadrature,
    precompute_kernel,
)

FORM_SPLIT = "split"

DIRECTIONAL_POWERS = (2, 3, 4, 6)
DIRECTIONAL_AXES = (0, 1)


class CollisionEngine:
    """Bundles the precomputed tensors behind a pairs -> output evaluation.

    engine: 'fast' (circular, DFT) or 'direct' (zero-outside literal sum,
    the original method's convention).  form: 'non-split' or 'split'.
    """

    def __init__(
        self,
        mesh: VelocityMesh,
        form: str = FORM_NONSPLIT,
        engine: str = "fast",
        tensor: KernelTensor | None = None,
        spectral: SpectralKernel | None = None,
        frequency: CollisionFrequencyWeights | None = None,
    ):
        if form not in (FORM_NONSPLIT, FORM_SPLIT):
            raise ConfigurationError(f"unknown operator form {form!r}")
        if engine not in ("fast", "direct"):
            raise ConfigurationError(f"unknown engine {engine!r}")
        if engine == "fast" and spectral is None:
            raise ConfigurationError("fast engine needs a spectral kernel")
        if engine == "direct" and tensor is None:
            raise ConfigurationError("direct engine needs a kernel tensor")
        if form == FORM_SPLIT and frequency is None:
            raise ConfigurationError("split form needs collision-frequency weights")
        self.mesh = mesh
        self.form = form
        self.engine = engine
        self.tensor = tensor
        self.spectral = spectral
        self.frequency = frequency
        self._wnode = node_quadrature_weights(mesh)

    @classmethod
    def build(
        cls,
        mesh: VelocityMesh,
        model: InteractionModel,
        quad: SphereQuadrature,
        radius: float | None = None,
        form: str = FORM_NONSPLIT,
        engine: str = "fast",
        max_bytes: int | None = None,
        verbose: bool = False,
    ) -> "CollisionEngine":
        """Precompute everything the requested form/engine combination needs."""
        kernel_form = FORM_GAIN if form == FORM_SPLIT else FORM_NONSPLIT
        tensor = precompute_kernel(
            mesh, model, quad, radius, kernel_form, max_bytes, verbose
        )
        spectral = (
            spectral_transform_kernel(tensor, max_bytes) if engine == "fast" else None
        )
        frequency = (
            CollisionFrequencyWeights(mesh, model, max_bytes)
            if form == FORM_SPLIT
            else None
        )
        return cls(mesh, form, engine, tensor, spectral, frequency)

    def evaluate_pairs(self, pairs, wrap: str | None = None) -> CollisionOutput:
        """Accumulated bilinear collision output over (left, right) pairs."""
        if wrap is None:
            wrap = "circular" if self.engine == "fast" else "zero-outside"
        if self.engine == "fast":
            out = fast_convolve_pairs(pairs, self.spectral, self.mesh)
        else:
            out = direct_convolve_pairs(pairs, self.tensor, wrap)
        if self.form == FORM_SPLIT:
            loss = np.zeros_like(out.values)
            for left, right in pairs:
                nu = self.frequency.frequency(right.values)
                loss += self._wnode * left.values * nu
            out = CollisionOutput(self.mesh, out.values - loss, out.imag_residue)
        return out

    def evaluate(self, fld: DistributionField, decompose: bool = False) -> CollisionOutput:
        """Collision output for a single field, optionally decomposed."""
        return self.evaluate_pairs(rhs_pairs(fld, decompose))


def rhs_pairs(fld: DistributionField, decompose: bool):
    """The bilinear pair list: [(f,f)] or the three decomposed terms."""
    if not decompose:
        return [(fld, fld)]
    _, fm, df = macro_micro_decompose(fld)
    return [(fm, df), (df, fm), (df, df)]


def collision_rhs(
    fld: DistributionField, engine: CollisionEngine, decompose: bool = True
) -> DistributionField:
    """df/dt: Galerkin projections scaled by 8/(omega_i dV)."""
    out = engine.evaluate(fld, decompose)
    w = node_quadrature_weights(fld.mesh)
    return DistributionField(fld.mesh, out.values / w, copy=False)


def output_moments(out: CollisionOutput, reference: MomentSet | None = None) -> dict:
    """Moment content of the raw Galerkin projections.

    mass/momentum/energy are the quadrature moments of the induced df/dt;
    all vanish for the exact operator.  'temperature_rate' is dT/dt
    implied by the output, computed against the reference moments (needed
    for the bulk velocity and T); it needs `reference`.
    """
    coords = out.mesh.node_coords()
    mass = float(np.sum(out.values))
    momentum = np.array([np.sum(out.values * coords[..., d]) for d in range(3)])
    energy = float(np.sum(out.values * np.sum(coords**2, axis=-1)))
    result = {"mass": mass, "momentum": momentum, "energy": energy}
    if reference is not None:
        n = reference.density
        ub = reference.bulk_velocity
        centered = float(
            np.sum(out.values * np.sum((coords - ub) ** 2, axis=-1))
        )
        result["temperature_rate"] = (2.0 / (3.0 * n)) * centered - (
            reference.temperature / n
        ) * mass
    return result


# ----------------------------------------------------------------------
# presets (upstream/downstream Maxwellian mixtures of normal shocks)

_PRESETS = {
    "mach3": {
        "maxwellians": [
            MaxwellianParams(1.0007, (1.2247, 0.0, 0.0), 0.2),
            MaxwellianParams(2.9992, (0.4082, 0.0, 0.0), 0.7333),
        ],
        "cells": 33,
    },
    "mach155": {
        "maxwellians": [
            MaxwellianParams(1.6094, (0.7750, 0.0, 0.0), 0.3),
            MaxwellianParams(2.8628, (0.4357, 0.0, 0.0), 0.464),
        ],
        "cells": 15,
    },
}

PRESET_DOMAIN = ((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0))


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    maxwellians: tuple[MaxwellianParams, ...]
    recommended_grid: GridSpec

    def build_field(self, mesh: VelocityMesh) -> DistributionField:
        return sample_maxwellian_sum(mesh, self.maxwellians)


def preset_scenario(name: str) -> ScenarioPreset:
    """Named bi-Maxwellian initial states with their recommended grids."""
    entry = _PRESETS.get(name)
    if entry is None:
        raise ConfigurationError(
            f"unknown scenario {name!r}; available: {sorted(_PRESETS)}"
        )
    grid = GridSpec(PRESET_DOMAIN[0], PRESET_DOMAIN[1], entry["cells"], (1, 1, 1))
    return ScenarioPreset(name, tuple(entry["maxwellians"]), grid)


# ----------------------------------------------------------------------
# time integration


@dataclass
class RelaxationConfig:
    dt: float = 0.01
    t_final: float = 1.0
    scheme: str = "rk4"
    record_every: int = 1
    decompose: bool = True
    conserve_moments: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.t_final < 0:
            raise ConfigurationError(f"t_final must be >= 0, got {self.t_final}")
        if self.scheme not in ("euler", "rk4"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")


@dataclass
class MomentHistory:
    """Recorded moment trajectories plus conservation drift vs t=0."""

    times: list = field(default_factory=list)
    moment_sets: list = field(default_factory=list)
    directional: list = field(default_factory=list)  # {(axis, p): value}
    drift: list = field(default_factory=list)

    def record(self, t: float, fld: DistributionField):
        m = moments(fld)
        w = node_quadrature_weights(fld.mesh)
        coords = fld.mesh.node_coords()
        wf = w * fld.values
        ub = m.bulk_velocity
        dirs = {}
        for axis in DIRECTIONAL_AXES:
            centered = coords[..., axis] - ub[axis]
            for p in DIRECTIONAL_POWERS:
                dirs[(axis, p)] = float(np.sum(wf * centered**p))
        self.times.append(float(t))
        self.moment_sets.append(m)
        self.directional.append(dirs)
        if len(self.moment_sets) == 1:
            self.drift.append({"mass": 0.0, "momentum": np.zeros(3), "energy": 0.0})
        else:
            m0 = self.moment_sets[0]
            pscale = m0.density * np.sqrt(m0.temperature)
            self.drift.append(
                {
                    "mass": (m.density - m0.density) / m0.density,
                    "momentum": (m.momentum - m0.momentum) / pscale,
                    "energy": (m.energy - m0.energy) / abs(m0.energy),
                }
            )

    def to_csv(self, path):
        header = (
            ["t", "density", "momentum_u", "momentum_v", "momentum_w", "T", "T_x", "T_y", "T_z"]
            + [f"f_phi_{axis + 1}_{p}" for axis in DIRECTIONAL_AXES for p in DIRECTIONAL_POWERS]
            + ["drift_mass", "drift_momentum_u", "drift_momentum_v", "drift_momentum_w", "drift_energy"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, m, dirs, dr in zip(
                self.times, self.moment_sets, self.directional, self.drift
            ):
                row = [t, m.density, *m.momentum, m.temperature, *m.directional_temperatures]
                row += [dirs[(axis, p)] for axis in DIRECTIONAL_AXES for p in DIRECTIONAL_POWERS]
                row += [dr["mass"], *dr["momentum"], dr["energy"]]
                writer.writerow([f"{x:.17e}" for x in row])


def _conserve_project(fld: DistributionField, target: MomentSet) -> DistributionField:
    """Least-change Lagrange-multiplier fix restoring (n, n*ubar, E).

    Adds a combination of {f_M, v_d f_M, |v|^2 f_M} whose quadrature
    moments cancel the drift.  Off by default; the acceptance runs never
    enable it.
    """
    mesh = fld.mesh
    m = moments(fld)
    params = MaxwellianParams(m.density, tuple(m.bulk_velocity), m.temperature)
    from .distribution import maxwellian_eval, sample_field

    fm = sample_field(mesh, lambda v: maxwellian_eval(params, v))
    coords = mesh.node_coords()
    basis = [fm.values]
    basis += [fm.values * coords[..., d] for d in range(3)]
    basis.append(fm.values * np.sum(coords**2, axis=-1))
    w = node_quadrature_weights(mesh)
    mults = [np.ones_like(fld.values)] + [coords[..., d] for d in range(3)]
    mults.append(np.sum(coords**2, axis=-1))
    Amat = np.array([[np.sum(w * mu * b) for b in basis] for mu in mults])
    rhs = np.array(
        [
            target.density - m.density,
            *(target.momentum - m.momentum),
            target.energy - m.energy,
        ]
    )
    lam = np.linalg.solve(Amat, rhs)
    corrected = fld.values + sum(l * b for l, b in zip(lam, basis))
    return DistributionField(mesh, corrected, copy=False)


def integrate(
    field0: DistributionField,
    config: RelaxationConfig,
    engine: CollisionEngine,
):
    """March the relaxation problem; returns (MomentHistory, final field).

    Records moments every `record_every` steps (plus the initial and
    final states).  Non-finite state raises DivergenceError with the
    offending step index.
    """
    m0 = moments(field0)
    # collision-frequency scale: sigma_T * n * (2 vmax)^alpha
    model = (engine.tensor or engine.spectral).model
    vmax = float(
        np.max(np.abs([*field0.mesh.spec.domain_min, *field0.mesh.spec.domain_max]))
    )
    nu_scale = model.sigma_total * m0.density * (2.0 * vmax) ** model.alpha
    if config.dt * nu_scale >= 1.0:
        warnings.warn(
            f"dt * collision-frequency scale = {config.dt * nu_scale:.2f} >= 1; "
            "the explicit march may be inaccurate",
            stacklevel=2,
        )

    n_steps = int(round(config.t_final / config.dt))
    history = MomentHistory()
    history.record(0.0, field0)
    state = field0.copy()

    def rhs(f):
        return collision_rhs(f, engine, config.decompose)

    for step in range(1, n_steps + 1):
        dt = config.dt
        last_good = state
        try:
            if config.scheme == "euler":
                state = state + dt * rhs(state)
            else:
                k1 = rhs(state)
                k2 = rhs(state + (0.5 * dt) * k1)
                k3 = rhs(state + (0.5 * dt) * k2)
                k4 = rhs(state + dt * k3)
                state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except (DGBoltzError, FloatingPointError) as exc:
            # non-finite or degenerate intermediates surface here
            err = DivergenceError(f"integration failed at step {step}: {exc}", step)
            err.last_field = last_good
            raise err from exc
        if not np.all(np.isfinite(state.values)):
            err = DivergenceError(f"non-finite state at step {step}", step)
            err.last_field = last_good
            raise err
        if config.conserve_moments:
            state = _conserve_project(state, m0)
        if step % config.record_every == 0 or step == n_steps:
            history.record(step * config.dt, state)
    return history, state


def mean_free_time_estimate(m: MomentSet, model: InteractionModel) -> float:
    """1 / (n sigma_T <|g|>) with the Maxwellian mean relative speed."""
    gbar = np.sqrt(8.0 * m.temperature / np.pi)
    return 1.0 / (m.density * model.sigma_total * gbar**model.alpha)
