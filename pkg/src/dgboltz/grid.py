"""Uniform velocity mesh with a per-cell tensor-product Lagrange nodal basis.

The velocity domain is a box partitioned into M^3 identical cells K_j.
Each cell carries Gauss-Legendre nodes of orders (s_u, s_v, s_w) per
dimension; the basis functions are the tensor products of the 1-D Lagrange
cardinal polynomials through those nodes, supported on their own cell.
Because nodes sit at Gauss points, the basis is discrete-orthogonal:

    integral_{K_j} phi_p phi_q dv = (omega_p * cell_volume / 8) delta_pq

where omega_p is the product of the 1-D reference weights and the /8 is
the Jacobian of mapping [-1,1]^3 onto the cell.  All objects here are
immutable after construction and safe to share.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

MAX_GAUSS_ORDER = 5


@dataclass(frozen=True)
class GaussRule:
    """Gauss-Legendre rule on the reference interval [-1, 1]."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray


_RULE_CACHE: dict[int, GaussRule] = {}


def gauss_legendre(order: int) -> GaussRule:
    """Classical Gauss-Legendre rule of the given order, 1 <= order <= 5."""
    if not 1 <= order <= MAX_GAUSS_ORDER:
        raise ConfigurationError(
            f"Gauss order must be in 1..{MAX_GAUSS_ORDER}, got {order}"
        )
    rule = _RULE_CACHE.get(order)
    if rule is None:
        nodes, weights = np.polynomial.legendre.leggauss(order)
        # enforce exact symmetry so mirrored nodes cancel bitwise
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = 0.5 * (weights + weights[::-1])
        nodes.setflags(write=False)
        weights.setflags(write=False)
        rule = GaussRule(order, nodes, weights)
        _RULE_CACHE[order] = rule
    return rule


def lagrange_eval(rule: GaussRule, l: int, x) -> float | np.ndarray:
    """1-D Lagrange cardinal polynomial through the rule's nodes.

    `l` is 1-based (matches the node numbering); `x` is in reference
    coordinates and may be an array.
    """
    if not 1 <= l <= rule.order:
        raise IndexError(f"Lagrange index {l} out of range 1..{rule.order}")
    kappa = rule.nodes
    x = np.asarray(x, dtype=float)
    result = np.ones_like(x)
    kl = kappa[l - 1]
    for p in range(rule.order):
        if p == l - 1:
            continue
        result = result * (kappa[p] - x) / (kappa[p] - kl)
    if result.ndim == 0:
        return float(result)
    return result


def flatten_node_index(l: int, m: int, n: int, spec: "GridSpec") -> int:
    """Map 1-based per-dimension node indices to the flat 1-based index.

    i = (l-1)*s_v*s_w + (m-1)*s_w + n
    """
    su, sv, sw = spec.nodes_per_dim
    if not (1 <= l <= su and 1 <= m <= sv and 1 <= n <= sw):
        raise IndexError(
            f"node index ({l},{m},{n}) outside 1..({su},{sv},{sw})"
        )
    return (l - 1) * sv * sw + (m - 1) * sw + n


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the uniform velocity mesh.

    cells_per_dim is the same M in each direction; nodes_per_dim are the
    per-dimension Gauss orders (s_u, s_v, s_w), each in 1..5.
    """

    domain_min: tuple[float, float, float]
    domain_max: tuple[float, float, float]
    cells_per_dim: int
    nodes_per_dim: tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        object.__setattr__(self, "domain_min", tuple(float(x) for x in self.domain_min))
        object.__setattr__(self, "domain_max", tuple(float(x) for x in self.domain_max))
        object.__setattr__(self, "nodes_per_dim", tuple(int(s) for s in self.nodes_per_dim))
        object.__setattr__(self, "cells_per_dim", int(self.cells_per_dim))
        if len(self.domain_min) != 3 or len(self.domain_max) != 3:
            raise ConfigurationError("domain bounds must be 3-vectors")
        if not all(hi > lo for lo, hi in zip(self.domain_min, self.domain_max)):
            raise ConfigurationError("domain_max must exceed domain_min componentwise")
        # one M is exposed; the per-dimension triple exists only so the
        # equal-cell-count restriction is a validation, not a type shape
        cells = (self.cells_per_dim,) * 3
        if any(m < 1 for m in cells) or len(set(cells)) != 1:
            raise ConfigurationError("cells_per_dim must be a positive integer M")
        if len(self.nodes_per_dim) != 3:
            raise ConfigurationError("nodes_per_dim must be a triple")
        if not all(1 <= s <= MAX_GAUSS_ORDER for s in self.nodes_per_dim):
            raise ConfigurationError(
                f"nodes_per_dim entries must be in 1..{MAX_GAUSS_ORDER}"
            )

    @property
    def deltas(self) -> np.ndarray:
        """Cell sizes (du, dv, dw)."""
        return (np.asarray(self.domain_max) - np.asarray(self.domain_min)) / self.cells_per_dim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.deltas))

    @property
    def nodes_per_cell(self) -> int:
        su, sv, sw = self.nodes_per_dim
        return su * sv * sw

    @property
    def total_dof(self) -> int:
        return self.nodes_per_cell * self.cells_per_dim**3

    def fingerprint(self) -> int:
        """Stable 64-bit grid identity used by kernel/field compatibility checks."""
        payload = struct.pack(
            "<4I6d",
            self.cells_per_dim,
            *self.nodes_per_dim,
            *self.domain_min,
            *self.domain_max,
        )
        digest = hashlib.sha256(payload).digest()
        return int.from_bytes(digest[:8], "little")


class VelocityMesh:
    """GridSpec plus precomputed node coordinates, weights and basis data."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        M = spec.cells_per_dim
        su, sv, sw = spec.nodes_per_dim
        self.rules = (gauss_legendre(su), gauss_legendre(sv), gauss_legendre(sw))
        self.deltas = spec.deltas
        self.domain_min = np.asarray(spec.domain_min)
        self.domain_max = np.asarray(spec.domain_max)

        # node offsets from the cell's lower corner, flat index u-major:
        # i = (l-1)*sv*sw + (m-1)*sw + n  (0-based internally)
        ref = [0.5 * (r.nodes + 1.0) * d for r, d in zip(self.rules, self.deltas)]
        offs = np.stack(
            np.meshgrid(ref[0], ref[1], ref[2], indexing="ij"), axis=-1
        ).reshape(-1, 3)
        self.node_offsets = offs  # (s3, 3)

        wprod = np.einsum(
            "i,j,k->ijk",
            self.rules[0].weights,
            self.rules[1].weights,
            self.rules[2].weights,
        ).reshape(-1)
        self.node_weights = wprod  # omega_i, sums to 8

        self.generating_cell = (M // 2, M // 2, M // 2)

        axes = [self.domain_min[d] + (np.arange(M) + 0.5) * self.deltas[d] for d in range(3)]
        self.cell_centers = np.stack(
            np.meshgrid(axes[0], axes[1], axes[2], indexing="ij"), axis=-1
        )  # (M, M, M, 3)

        self._node_coords = None
        self.fingerprint = spec.fingerprint()

    @property
    def nodes_per_cell(self) -> int:
        return self.spec.nodes_per_cell

    @property
    def cells_per_dim(self) -> int:
        return self.spec.cells_per_dim

    def cell_lower(self, j) -> np.ndarray:
        """Lower corner of cell j (index triple)."""
        return self.domain_min + np.asarray(j) * self.deltas

    def node_coords(self) -> np.ndarray:
        """All node coordinates, shape (s3, M, M, M, 3)."""
        if self._node_coords is None:
            M = self.cells_per_dim
            # same arithmetic as cell_lower()/node_position() so that all
            # code paths see bitwise-identical coordinates
            low = [self.domain_min[d] + np.arange(M) * self.deltas[d] for d in range(3)]
            lower = np.stack(np.meshgrid(low[0], low[1], low[2], indexing="ij"), axis=-1)
            coords = lower[None, ...] + self.node_offsets[:, None, None, None, :]
            coords = np.ascontiguousarray(coords)
            assert coords.shape == (self.nodes_per_cell, M, M, M, 3)
            self._node_coords = coords
        return self._node_coords

    def node_position(self, i: int, j) -> np.ndarray:
        """Coordinate of local node i (0-based) in cell j (index triple)."""
        return self.cell_lower(j) + self.node_offsets[i]

    def cell_shift_vector(self, j) -> np.ndarray:
        """Offset of cell j's center from the generating cell's center."""
        return (np.asarray(j) - np.asarray(self.generating_cell)) * self.deltas

    def reference_coords(self, j, v) -> np.ndarray:
        """Map velocities into cell j's reference cube [-1,1]^3."""
        v = np.asarray(v, dtype=float)
        return 2.0 * (v - self.cell_lower(j)) / self.deltas - 1.0

    def _inside(self, j, x) -> np.ndarray:
        """Half-open cell membership in reference coordinates.

        The upper face belongs to the next cell so that every point in the
        domain is claimed by exactly one cell (keeps the partition of unity
        exact when sphere-quadrature points land on faces); cells on the
        domain's upper boundary keep their top face.
        """
        M = self.cells_per_dim
        j = np.asarray(j)
        inside = np.ones(x.shape[:-1], dtype=bool)
        for d in range(3):
            xd = x[..., d]
            upper = (xd <= 1.0) if j[d] == M - 1 else (xd < 1.0)
            inside &= (xd >= -1.0) & upper
        return inside

    def basis_eval(self, i: int, j, v) -> float | np.ndarray:
        """phi_{i;j}(v): tensor-product Lagrange value, 0 outside cell j.

        `i` is the 0-based flat local node index; `v` may be a single
        3-vector or an (..., 3) array.
        """
        su, sv, sw = self.spec.nodes_per_dim
        li, rem = divmod(i, sv * sw)
        mi, ni = divmod(rem, sw)
        x = self.reference_coords(j, v)
        inside = self._inside(j, x)
        val = (
            lagrange_eval(self.rules[0], li + 1, x[..., 0])
            * lagrange_eval(self.rules[1], mi + 1, x[..., 1])
            * lagrange_eval(self.rules[2], ni + 1, x[..., 2])
        )
        return np.where(inside, val, 0.0)[()]

    def basis_eval_all(self, j, v) -> np.ndarray:
        """All s3 basis values of cell j at points v: shape (..., s3)."""
        x = self.reference_coords(j, v)
        inside = self._inside(j, x)
        per_dim = []
        for d, rule in enumerate(self.rules):
            vals = np.stack(
                [lagrange_eval(rule, l + 1, x[..., d]) for l in range(rule.order)],
                axis=-1,
            )
            per_dim.append(vals)
        tensor = np.einsum(
            "...i,...j,...k->...ijk", per_dim[0], per_dim[1], per_dim[2]
        ).reshape(x.shape[:-1] + (self.nodes_per_cell,))
        return np.where(inside[..., None], tensor, 0.0)
