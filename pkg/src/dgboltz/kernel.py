"""Precomputed collision-kernel tensors on the generating cell.

For a velocity pair (v, v1) with g = v - v1 the post-collision velocity
lies on the sphere of radius |g|/2 around the pair midpoint,

    v' = (v + v1)/2 + (|g|/2) w,      v'_1 = (v + v1)/2 - (|g|/2) w,

so the kernel against a test function phi is the sphere integral

    A(v, v1; phi) = |g|^alpha * integral_{S^2} (phi(v') - phi(v)) b(theta) dsigma

(non-split form; the gain-only form drops the phi(v) term).  Entries are
stored for the generating cell only -- shift invariance generates every
other cell -- with the two Gauss quadrature factors folded in:

    A[i, i', i''; j', j''] = A(v_{i';j'}, v_{i'';j''}; phi_{i;c})
                             * (omega_{i'} dV/8) * (omega_{i''} dV/8)

Layout: (i, i', i'') outermost, then the flattened (j', j'') cell pairs
row-major, matching the per-(i,i',i'') DFT of the fast path.  Entries
with |v - v1| > R are zero (relative-speed truncation).  Only a constant
angular kernel b(theta) = b0 is validated; the model type is the hook
for anisotropic profiles.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    ConfigurationError,
    IncompatibleGridError,
    KernelFormatError,
    SizingError,
)
from .grid import GridSpec, VelocityMesh, gauss_legendre

FORM_NONSPLIT = "non-split"
FORM_GAIN = "gain-only"

#: refuse tensor allocations above this unless the caller raises the cap
DEFAULT_MEMORY_CAP = 3 * 2**30


@dataclass(frozen=True)
class InteractionModel:
    """VHS-style interaction B(|g|, theta) = b0 * |g|^alpha.

    alpha = 0 is the Maxwellian gas, alpha = 1 hard spheres.  The default
    b0 = 1/(4 pi) normalizes the total cross-section sigma_T to 1.
    """

    alpha: float = 1.0
    b0: float = 1.0 / (4.0 * np.pi)

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "b0", float(self.b0))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.b0 < 0:
            raise ConfigurationError(f"b0 must be >= 0, got {self.b0}")

    @property
    def sigma_total(self) -> float:
        """sigma_T = integral b dsigma = 4 pi b0."""
        return 4.0 * np.pi * self.b0

    def b(self, cos_theta):
        """Angular kernel; constant b0 (angular cutoff holds trivially)."""
        return np.broadcast_to(self.b0, np.shape(cos_theta)).astype(float)


def post_collision_velocities(v, v1, w):
    """Post-collision pair for deflection direction w (|w| = 1)."""
    v = np.asarray(v, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    w = np.asarray(w, dtype=float)
    g = v - v1
    gn = np.linalg.norm(g, axis=-1, keepdims=True)
    vprime = v - 0.5 * (g - gn * w)
    v1prime = v - 0.5 * (g + gn * w)
    return vprime, v1prime


@dataclass(frozen=True)
class SphereQuadrature:
    """Product rule on S^2: Gauss-Legendre in cos(theta), uniform in epsilon."""

    n_theta: int
    n_epsilon: int
    nodes: np.ndarray    # (nq, 3) unit vectors
    weights: np.ndarray  # (nq,), sums to 4 pi


def sphere_quadrature(n_theta: int, n_epsilon: int) -> SphereQuadrature:
    if n_theta < 2 or n_epsilon < 4:
        raise ConfigurationError(
            f"need n_theta >= 2 and n_epsilon >= 4, got ({n_theta}, {n_epsilon})"
        )
    mu, wmu = np.polynomial.legendre.leggauss(n_theta)
    # half-step shift keeps azimuthal nodes off the coordinate planes, so
    # axis-aligned node pairs never put quadrature points exactly on faces
    eps = 2.0 * np.pi * (np.arange(n_epsilon) + 0.5) / n_epsilon
    weps = np.full(n_epsilon, 2.0 * np.pi / n_epsilon)
    sin_t = np.sqrt(1.0 - mu**2)
    nodes = np.empty((n_theta * n_epsilon, 3))
    nodes[:, 0] = np.outer(sin_t, np.cos(eps)).ravel()
    nodes[:, 1] = np.outer(sin_t, np.sin(eps)).ravel()
    nodes[:, 2] = np.repeat(mu, n_epsilon)
    weights = np.outer(wmu, weps).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return SphereQuadrature(n_theta, n_epsilon, nodes, weights)


def kernel_entry(
    mesh: VelocityMesh,
    i: int,
    vp,
    vpp,
    model: InteractionModel,
    quad: SphereQuadrature,
    form: str = FORM_NONSPLIT,
    basis_cell=None,
) -> float:
    """A(vp, vpp; phi_{i;cell}) by direct spherical quadrature (unweighted).

    Reference path: evaluates the basis polynomial directly on the given
    cell (generating cell by default), no shift identity involved.  The
    Gauss factors of the stored tensor are NOT folded in here.
    """
    if basis_cell is None:
        basis_cell = mesh.generating_cell
    vp = np.asarray(vp, dtype=float)
    vpp = np.asarray(vpp, dtype=float)
    g = vp - vpp
    gn = float(np.linalg.norm(g))
    mid = 0.5 * (vp + vpp)
    vprime = mid + 0.5 * gn * quad.nodes
    phi_gain = mesh.basis_eval_all(basis_cell, vprime)[:, i]
    if gn > 0:
        cos_theta = quad.nodes @ (g / gn)
    else:
        cos_theta = np.zeros(len(quad.weights))
    bvals = model.b(cos_theta)
    integrand = phi_gain
    if form == FORM_NONSPLIT:
        integrand = integrand - mesh.basis_eval(i, basis_cell, vp)
    elif form != FORM_GAIN:
        raise ConfigurationError(f"unknown kernel form {form!r}")
    return gn**model.alpha * float(np.sum(integrand * bvals * quad.weights))


@njit(cache=True)
def _fill_kernel(
    values,
    domain_min,
    deltas,
    M,
    c_flat,
    node_offsets,
    fold,
    orders,
    kappa_u,
    kappa_v,
    kappa_w,
    w_dirs,
    w_weights,
    b0,
    alpha,
    radius,
    gain_only,
):
    # values: (s3, s3, s3, M^3, M^3), zero-initialized
    s3 = node_offsets.shape[0]
    nq = w_dirs.shape[0]
    su, sv, sw = orders[0], orders[1], orders[2]
    total_w = 0.0
    for q in range(nq):
        total_w += w_weights[q]

    cu = c_flat // (M * M)
    cv = (c_flat // M) % M
    cw = c_flat % M
    clow0 = domain_min[0] + cu * deltas[0]
    clow1 = domain_min[1] + cv * deltas[1]
    clow2 = domain_min[2] + cw * deltas[2]
    chigh0 = clow0 + deltas[0]
    chigh1 = clow1 + deltas[1]
    chigh2 = clow2 + deltas[2]
    # half-open membership (matches VelocityMesh._inside)
    top0 = cu == M - 1
    top1 = cv == M - 1
    top2 = cw == M - 1

    lu = np.empty(su)
    lv = np.empty(sv)
    lw = np.empty(sw)
    acc = np.empty(s3)

    M3 = M * M * M
    for j1 in range(M3):
        j1u = j1 // (M * M)
        j1v = (j1 // M) % M
        j1w = j1 % M
        low10 = domain_min[0] + j1u * deltas[0]
        low11 = domain_min[1] + j1v * deltas[1]
        low12 = domain_min[2] + j1w * deltas[2]
        loss_cell = (j1 == c_flat) and (not gain_only)
        for j2 in range(M3):
            j2u = j2 // (M * M)
            j2v = (j2 // M) % M
            j2w = j2 % M
            low20 = domain_min[0] + j2u * deltas[0]
            low21 = domain_min[1] + j2v * deltas[1]
            low22 = domain_min[2] + j2w * deltas[2]
            for i1 in range(s3):
                vp0 = low10 + node_offsets[i1, 0]
                vp1 = low11 + node_offsets[i1, 1]
                vp2 = low12 + node_offsets[i1, 2]
                for i2 in range(s3):
                    vpp0 = low20 + node_offsets[i2, 0]
                    vpp1 = low21 + node_offsets[i2, 1]
                    vpp2 = low22 + node_offsets[i2, 2]
                    g0 = vp0 - vpp0
                    g1 = vp1 - vpp1
                    g2 = vp2 - vpp2
                    gn = np.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
                    if gn > radius:
                        continue
                    mid0 = 0.5 * (vp0 + vpp0)
                    mid1 = 0.5 * (vp1 + vpp1)
                    mid2 = 0.5 * (vp2 + vpp2)
                    r = 0.5 * gn
                    # can the post-collision sphere reach the generating cell?
                    dlo0 = max(max(clow0 - mid0, mid0 - chigh0), 0.0)
                    dlo1 = max(max(clow1 - mid1, mid1 - chigh1), 0.0)
                    dlo2 = max(max(clow2 - mid2, mid2 - chigh2), 0.0)
                    dhi0 = max(abs(mid0 - clow0), abs(mid0 - chigh0))
                    dhi1 = max(abs(mid1 - clow1), abs(mid1 - chigh1))
                    dhi2 = max(abs(mid2 - clow2), abs(mid2 - chigh2))
                    dlo2sum = dlo0 * dlo0 + dlo1 * dlo1 + dlo2 * dlo2
                    dhi2sum = dhi0 * dhi0 + dhi1 * dhi1 + dhi2 * dhi2
                    r2 = r * r
                    reach = (dlo2sum <= r2) and (r2 <= dhi2sum)
                    if not (reach or loss_cell):
                        continue
                    for i in range(s3):
                        acc[i] = 0.0
                    if reach:
                        for q in range(nq):
                            vx0 = mid0 + r * w_dirs[q, 0]
                            vx1 = mid1 + r * w_dirs[q, 1]
                            vx2 = mid2 + r * w_dirs[q, 2]
                            x0 = 2.0 * (vx0 - clow0) / deltas[0] - 1.0
                            x1 = 2.0 * (vx1 - clow1) / deltas[1] - 1.0
                            x2 = 2.0 * (vx2 - clow2) / deltas[2] - 1.0
                            if x0 < -1.0 or x1 < -1.0 or x2 < -1.0:
                                continue
                            if x0 > 1.0 or (x0 == 1.0 and not top0):
                                continue
                            if x1 > 1.0 or (x1 == 1.0 and not top1):
                                continue
                            if x2 > 1.0 or (x2 == 1.0 and not top2):
                                continue
                            for l in range(su):
                                t = 1.0
                                for p in range(su):
                                    if p != l:
                                        t = t * (kappa_u[p] - x0) / (kappa_u[p] - kappa_u[l])
                                lu[l] = t
                            for m in range(sv):
                                t = 1.0
                                for p in range(sv):
                                    if p != m:
                                        t = t * (kappa_v[p] - x1) / (kappa_v[p] - kappa_v[m])
                                lv[m] = t
                            for n in range(sw):
                                t = 1.0
                                for p in range(sw):
                                    if p != n:
                                        t = t * (kappa_w[p] - x2) / (kappa_w[p] - kappa_w[n])
                                lw[n] = t
                            wq = w_weights[q]
                            idx = 0
                            for l in range(su):
                                for m in range(sv):
                                    lm = lu[l] * lv[m]
                                    for n in range(sw):
                                        acc[idx] += lm * lw[n] * wq
                                        idx += 1
                    pref = gn**alpha * b0 * fold[i1] * fold[i2]
                    for i in range(s3):
                        val = acc[i]
                        if loss_cell and i == i1:
                            val -= total_w
                        if val != 0.0:
                            values[i, i1, i2, j1, j2] = pref * val


@dataclass
class KernelTensor:
    """Dense precomputed tensor, quadrature factors folded in."""

    form: str
    values: np.ndarray  # (s3, s3, s3, M^3, M^3)
    truncation_radius: float
    model: InteractionModel
    n_theta: int
    n_epsilon: int
    spec: GridSpec

    @property
    def fingerprint(self) -> int:
        return self.spec.fingerprint()

    @property
    def nonzero_fraction(self) -> float:
        return float(np.count_nonzero(self.values)) / self.values.size


def default_truncation_radius(spec: GridSpec) -> float:
    """Half the domain's linear size (the aliasing-freedom bound)."""
    extents = np.asarray(spec.domain_max) - np.asarray(spec.domain_min)
    return 0.5 * float(np.max(extents))


def kernel_bytes(spec: GridSpec) -> int:
    s3 = spec.nodes_per_cell
    return s3**3 * spec.cells_per_dim**6 * 8


def precompute_kernel(
    mesh: VelocityMesh,
    model: InteractionModel,
    quad: SphereQuadrature,
    radius: float | None = None,
    form: str = FORM_NONSPLIT,
    max_bytes: int | None = None,
    verbose: bool = False,
) -> KernelTensor:
    """Fill A[i, i', i''; j', j''] for the generating cell.

    radius=None selects the default truncation (half the domain size);
    pass numpy.inf for the untruncated tensor.
    """
    if form not in (FORM_NONSPLIT, FORM_GAIN):
        raise ConfigurationError(f"unknown kernel form {form!r}")
    if radius is None:
        radius = default_truncation_radius(mesh.spec)
    radius = float(radius)
    if not radius > 0:
        raise ConfigurationError(f"truncation radius must be > 0, got {radius}")
    cap = DEFAULT_MEMORY_CAP if max_bytes is None else int(max_bytes)
    need = kernel_bytes(mesh.spec)
    if need > cap:
        raise SizingError(
            f"kernel tensor needs {need / 2**20:.1f} MiB "
            f"(s^9 M^6 = {mesh.nodes_per_cell ** 3} * {mesh.cells_per_dim ** 6} doubles), "
            f"cap is {cap / 2**20:.1f} MiB"
        )
    M = mesh.cells_per_dim
    s3 = mesh.nodes_per_cell
    values = np.zeros((s3, s3, s3, M**3, M**3))
    c = mesh.generating_cell
    c_flat = (c[0] * M + c[1]) * M + c[2]
    fold = mesh.node_weights * mesh.spec.cell_volume / 8.0
    t0 = time.perf_counter()
    _fill_kernel(
        values,
        mesh.domain_min,
        mesh.deltas,
        M,
        c_flat,
        mesh.node_offsets,
        fold,
        np.asarray(mesh.spec.nodes_per_dim, dtype=np.int64),
        mesh.rules[0].nodes,
        mesh.rules[1].nodes,
        mesh.rules[2].nodes,
        quad.nodes,
        quad.weights,
        model.b0,
        model.alpha,
        radius,
        form == FORM_GAIN,
    )
    if verbose:
        nz = np.count_nonzero(values)
        print(
            f"kernel {form} M={M} s3={s3}: {values.size} entries, "
            f"{nz} nonzero ({nz / values.size:.3%}), "
            f"{time.perf_counter() - t0:.1f} s"
        )
    return KernelTensor(
        form, values, radius, model, quad.n_theta, quad.n_epsilon, mesh.spec
    )


def collision_invariant_sums(
    mesh: VelocityMesh,
    model: InteractionModel,
    quad: SphereQuadrature,
    vp,
    vpp,
):
    """Collision-invariant sums of the untruncated non-split kernel.

    For the fixed node pair, sums A(vp,vpp; phi_{i;j}) over every basis
    function of every cell, weighted by 1, v_d and |v|^2 at the basis
    nodes.  The mass sum vanishes per ordered pair; momentum and energy
    vanish only for the symmetrized pair (v'+v'_1 = v+v1 involves both
    partners), so those sums include the swapped-argument kernel.

    Returns a dict with 'mass', 'momentum', 'energy' and matching
    'abs_*' magnitudes for relative-error scaling.
    """
    vp = np.asarray(vp, dtype=float)
    vpp = np.asarray(vpp, dtype=float)
    M = mesh.cells_per_dim
    s3 = mesh.nodes_per_cell

    def entries(a, b):
        g = a - b
        gn = float(np.linalg.norm(g))
        mid = 0.5 * (a + b)
        vprime = mid + 0.5 * gn * quad.nodes
        cos_theta = quad.nodes @ (g / gn) if gn > 0 else np.zeros(len(quad.weights))
        bw = model.b(cos_theta) * quad.weights
        out = np.zeros((M, M, M, s3))
        for ju in range(M):
            for jv in range(M):
                for jw in range(M):
                    cell = (ju, jv, jw)
                    phi = mesh.basis_eval_all(cell, vprime)  # (nq, s3)
                    phi_at = mesh.basis_eval_all(cell, a)    # (s3,)
                    out[ju, jv, jw] = gn**model.alpha * (
                        bw @ phi - np.sum(bw) * phi_at
                    )
        return out

    e_fwd = entries(vp, vpp)
    e_rev = entries(vpp, vp)
    coords = np.moveaxis(mesh.node_coords(), 0, 3)  # (M, M, M, s3, 3)
    e_pair = e_fwd + e_rev
    vsq = np.sum(coords**2, axis=-1)
    result = {
        "mass": float(np.sum(e_fwd)),
        "abs_mass": float(np.sum(np.abs(e_fwd))),
        "momentum": np.array(
            [np.sum(coords[..., d] * e_pair) for d in range(3)]
        ),
        "abs_momentum": np.array(
            [np.sum(np.abs(coords[..., d] * e_pair)) for d in range(3)]
        ),
        "energy": float(np.sum(vsq * e_pair)),
        "abs_energy": float(np.sum(np.abs(vsq * e_pair))),
    }
    return result


# ----------------------------------------------------------------------
# collision-frequency weights (loss term of the split form)


class CollisionFrequencyWeights:
    """sigma_T |v_p - v_q|^alpha over all node pairs, as a dense matrix.

    Row/column order matches field.values.reshape(-1).  nu[g] at node p is
    sum_q N[p,q] * (omega_q dV/8) * g_q.
    """

    def __init__(self, mesh: VelocityMesh, model: InteractionModel,
                 max_bytes: int | None = None):
        n = mesh.spec.total_dof
        cap = DEFAULT_MEMORY_CAP if max_bytes is None else int(max_bytes)
        if n * n * 8 > cap:
            raise SizingError(
                f"collision-frequency table needs {n * n * 8 / 2**20:.1f} MiB, "
                f"cap is {cap / 2**20:.1f} MiB"
            )
        coords = np.moveaxis(mesh.node_coords(), -1, 0).reshape(3, -1)
        table = np.zeros((n, n))
        chunk = max(1, int(2**24 // max(n, 1)))
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            d2 = np.zeros((stop - start, n))
            for d in range(3):
                diff = coords[d, start:stop, None] - coords[d, None, :]
                d2 += diff * diff
            table[start:stop] = model.sigma_total * np.sqrt(d2) ** model.alpha
        self.mesh = mesh
        self.model = model
        self.table = table
        self._wflat = (mesh.node_weights * mesh.spec.cell_volume / 8.0).repeat(
            mesh.cells_per_dim**3
        )

    def frequency(self, field_values: np.ndarray) -> np.ndarray:
        """nu(v_p) for the given field values, same shape as the input."""
        flat = field_values.reshape(-1)
        nu = self.table @ (self._wflat * flat)
        return nu.reshape(field_values.shape)


# ----------------------------------------------------------------------
# kernel container I/O

_MAGIC = b"BGKA"
_VERSION = 1
_HEADER = struct.Struct("<4sHBB4I6d3d2IQQ")
_FORM_CODES = {FORM_NONSPLIT: 0, FORM_GAIN: 1}
_SPECTRAL_OFFSET = 2  # spectral containers reuse the codes shifted by 2


def _pack_header(form_code, spec, model, radius, n_theta, n_epsilon,
                 fingerprint, count):
    return _HEADER.pack(
        _MAGIC,
        _VERSION,
        form_code,
        0,
        spec.cells_per_dim,
        *spec.nodes_per_dim,
        *spec.domain_min,
        *spec.domain_max,
        model.alpha,
        model.b0,
        radius,
        n_theta,
        n_epsilon,
        fingerprint,
        count,
    )


def _unpack_header(blob, path):
    if len(blob) != _HEADER.size:
        raise KernelFormatError(f"truncated kernel file {path}")
    fields = _HEADER.unpack(blob)
    if fields[0] != _MAGIC:
        raise KernelFormatError(f"bad magic in {path}")
    if fields[1] != _VERSION:
        raise KernelFormatError(f"unsupported kernel version {fields[1]} in {path}")
    return fields


def save_kernel(tensor: KernelTensor, path) -> None:
    """Bitwise-stable container: header + little-endian payload."""
    header = _pack_header(
        _FORM_CODES[tensor.form],
        tensor.spec,
        tensor.model,
        tensor.truncation_radius,
        tensor.n_theta,
        tensor.n_epsilon,
        tensor.fingerprint,
        tensor.values.size,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tensor.values.astype("<f8", copy=False).tobytes())


def load_kernel(path, mesh: VelocityMesh | None = None) -> KernelTensor:
    """Read a real kernel container; validates fingerprint against `mesh`."""
    with open(path, "rb") as fh:
        fields = _unpack_header(fh.read(_HEADER.size), path)
        payload = np.frombuffer(fh.read(), dtype="<f8")
    form_code = fields[2]
    codes = {v: k for k, v in _FORM_CODES.items()}
    if form_code not in codes:
        raise KernelFormatError(
            f"{path} holds form code {form_code}; not a real-valued kernel tensor"
        )
    M, su, sv, sw = fields[4:8]
    bounds = fields[8:14]
    alpha, b0, radius = fields[14:17]
    n_theta, n_epsilon = fields[17:19]
    fingerprint, count = fields[19:21]
    spec = GridSpec(tuple(bounds[:3]), tuple(bounds[3:]), M, (su, sv, sw))
    if spec.fingerprint() != fingerprint:
        raise KernelFormatError(f"header fingerprint mismatch in {path}")
    if payload.size != count or count != spec.nodes_per_cell**3 * M**6:
        raise KernelFormatError(f"payload size mismatch in {path}")
    if mesh is not None and mesh.fingerprint != fingerprint:
        raise IncompatibleGridError(
            f"kernel in {path} was built for a different grid"
        )
    s3 = spec.nodes_per_cell
    values = payload.reshape(s3, s3, s3, M**3, M**3).copy()
    return KernelTensor(
        codes[form_code],
        values,
        radius,
        InteractionModel(alpha, b0),
        n_theta,
        n_epsilon,
        spec,
    )
