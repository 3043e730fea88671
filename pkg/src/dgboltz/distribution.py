"""Nodal distribution fields and their velocity moments.

A field stores the point values f_{i;j} at every Gauss node of every
cell; with the discrete-orthogonal basis this makes Galerkin coefficients
and point values the same numbers.  All moments are the Gauss-quadrature
sums with weight (omega_i * cell_volume / 8) per node, so linear moments
of nodal data are exact up to the basis order.

Dimensionless conventions used throughout:

    f_M(v) = n (pi T)^{-3/2} exp(-|v - ubar|^2 / T)
    T      = (2 / (3 n)) integral |v - ubar|^2 f dv

i.e. T is the squared most-probable speed, so that extracting moments of
a sampled Maxwellian returns its own parameters.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateFieldError
from .grid import GridSpec, VelocityMesh


@dataclass(frozen=True)
class MaxwellianParams:
    density: float
    bulk_velocity: tuple[float, float, float]
    temperature: float

    def __post_init__(self):
        object.__setattr__(self, "density", float(self.density))
        object.__setattr__(
            self, "bulk_velocity", tuple(float(u) for u in self.bulk_velocity)
        )
        object.__setattr__(self, "temperature", float(self.temperature))
        if self.density <= 0 or self.temperature <= 0:
            raise DegenerateFieldError(
                f"Maxwellian needs n > 0 and T > 0, got n={self.density}, T={self.temperature}"
            )


def maxwellian_eval(params: MaxwellianParams, v) -> float | np.ndarray:
    """Evaluate n (pi T)^{-3/2} exp(-|v - ubar|^2 / T) at v (vectorized)."""
    v = np.asarray(v, dtype=float)
    ubar = np.asarray(params.bulk_velocity)
    T = params.temperature
    r2 = np.sum((v - ubar) ** 2, axis=-1)
    return (params.density * (np.pi * T) ** -1.5 * np.exp(-r2 / T))[()]


@dataclass(frozen=True)
class MomentSet:
    density: float
    momentum: np.ndarray
    energy: float
    temperature: float
    directional_temperatures: np.ndarray

    @property
    def bulk_velocity(self) -> np.ndarray:
        return self.momentum / self.density


class DistributionField:
    """Node values f_{i;j} on a VelocityMesh, shape (s3, M, M, M)."""

    def __init__(self, mesh: VelocityMesh, values: np.ndarray, copy: bool = True):
        values = np.array(values, dtype=float, copy=copy)
        expected = (mesh.nodes_per_cell,) + (mesh.cells_per_dim,) * 3
        if values.shape != expected:
            raise ConfigurationError(
                f"field shape {values.shape} does not match mesh {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise DegenerateFieldError("field contains non-finite values")
        self.mesh = mesh
        self.values = values

    def copy(self) -> "DistributionField":
        return DistributionField(self.mesh, self.values, copy=True)

    def __add__(self, other):
        self._check(other)
        return DistributionField(self.mesh, self.values + other.values, copy=False)

    def __sub__(self, other):
        self._check(other)
        return DistributionField(self.mesh, self.values - other.values, copy=False)

    def __mul__(self, c):
        return DistributionField(self.mesh, self.values * float(c), copy=False)

    __rmul__ = __mul__

    def _check(self, other):
        if other.mesh.fingerprint != self.mesh.fingerprint:
            raise ConfigurationError("fields live on different meshes")


def node_quadrature_weights(mesh: VelocityMesh) -> np.ndarray:
    """Per-node integration weight omega_i * cell_volume / 8, shape (s3,1,1,1)."""
    w = mesh.node_weights * mesh.spec.cell_volume / 8.0
    return w[:, None, None, None]


def sample_field(mesh: VelocityMesh, f) -> DistributionField:
    """Collocate a velocity function onto the mesh nodes.

    `f` must accept an (..., 3) coordinate array (e.g. a Maxwellian or a
    numpy expression); nodal DG coefficients equal the point values.
    """
    values = np.asarray(f(mesh.node_coords()), dtype=float)
    if values.shape != mesh.node_coords().shape[:-1]:
        raise ConfigurationError("sampled function returned a wrong-shaped array")
    return DistributionField(mesh, values, copy=False)


def sample_maxwellian_sum(mesh: VelocityMesh, params_list) -> DistributionField:
    """Sample a sum of Maxwellians (the relaxation initial data)."""
    coords = mesh.node_coords()
    values = np.zeros(coords.shape[:-1])
    for p in params_list:
        values += maxwellian_eval(p, coords)
    return DistributionField(mesh, values, copy=False)


def raw_moments(field: DistributionField):
    """(density, momentum, energy) quadrature sums without positivity checks."""
    w = node_quadrature_weights(field.mesh)
    coords = field.mesh.node_coords()
    wf = w * field.values
    density = float(np.sum(wf))
    momentum = np.array([np.sum(wf * coords[..., d]) for d in range(3)])
    energy = float(np.sum(wf * np.sum(coords**2, axis=-1)))
    return density, momentum, energy


def moments(field: DistributionField) -> MomentSet:
    """Full moment set; raises DegenerateFieldError when density <= 0."""
    density, momentum, energy = raw_moments(field)
    if density <= 0:
        raise DegenerateFieldError(f"non-positive density {density}")
    ubar = momentum / density
    temperature = (2.0 / (3.0 * density)) * (energy - density * float(ubar @ ubar))
    w = node_quadrature_weights(field.mesh)
    coords = field.mesh.node_coords()
    wf = w * field.values
    directional = np.array(
        [
            2.0 / density * np.sum(wf * (coords[..., d] - ubar[d]) ** 2)
            for d in range(3)
        ]
    )
    return MomentSet(density, momentum, energy, temperature, directional)


def directional_moment(
    field: DistributionField,
    axis: int,
    power: int,
    centered: bool = True,
    bulk_velocity=None,
) -> float:
    """integral (v_axis - ubar_axis)^p f dv over the mesh (axis 0, 1 or 2).

    With centered=True the instantaneous bulk velocity is used (computed
    from the field unless supplied); otherwise the raw power is taken.
    """
    if axis not in (0, 1, 2):
        raise ConfigurationError(f"axis must be 0, 1 or 2, got {axis}")
    shift = 0.0
    if centered:
        if bulk_velocity is None:
            density, momentum, _ = raw_moments(field)
            if density <= 0:
                raise DegenerateFieldError(f"non-positive density {density}")
            bulk_velocity = momentum / density
        shift = float(np.asarray(bulk_velocity)[axis])
    w = node_quadrature_weights(field.mesh)
    coords = field.mesh.node_coords()
    return float(np.sum(w * field.values * (coords[..., axis] - shift) ** power))


def macro_micro_decompose(field: DistributionField):
    """Split f into the moment-matching Maxwellian plus the remainder.

    Returns (params, f_M field, delta field) with f_M + delta equal to
    the input; delta carries (quadrature-level) zero density, momentum
    and energy.
    """
    m = moments(field)
    if m.temperature <= 0:
        raise DegenerateFieldError(f"non-positive temperature {m.temperature}")
    params = MaxwellianParams(m.density, tuple(m.bulk_velocity), m.temperature)
    fm = sample_field(field.mesh, lambda v: maxwellian_eval(params, v))
    delta = field - fm
    return params, fm, delta


# ----------------------------------------------------------------------
# snapshot export

_FIELD_HEADER = struct.Struct("<4I6d")


def write_field_binary(field: DistributionField, path) -> None:
    """Flat little-endian snapshot: M, s_u, s_v, s_w, bounds, then values."""
    spec = field.mesh.spec
    with open(path, "wb") as fh:
        fh.write(
            _FIELD_HEADER.pack(
                spec.cells_per_dim,
                *spec.nodes_per_dim,
                *spec.domain_min,
                *spec.domain_max,
            )
        )
        fh.write(field.values.astype("<f8").tobytes())


def read_field_binary(path) -> DistributionField:
    with open(path, "rb") as fh:
        header = fh.read(_FIELD_HEADER.size)
        if len(header) != _FIELD_HEADER.size:
            raise ConfigurationError(f"truncated field file {path}")
        M, su, sv, sw, *bounds = _FIELD_HEADER.unpack(header)
        spec = GridSpec(tuple(bounds[:3]), tuple(bounds[3:]), M, (su, sv, sw))
        mesh = VelocityMesh(spec)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != spec.total_dof:
        raise ConfigurationError(f"field file {path} has wrong payload size")
    return DistributionField(
        mesh, data.reshape((spec.nodes_per_cell,) + (M,) * 3), copy=True
    )


def write_field_csv(field: DistributionField, path) -> None:
    """One row per node: u, v, w, value (17 significant digits)."""
    coords = field.mesh.node_coords().reshape(-1, 3)
    values = field.values.reshape(-1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "w", "f"])
        for row, val in zip(coords, values):
            writer.writerow([f"{x:.17e}" for x in row] + [f"{val:.17e}"])
