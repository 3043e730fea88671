"""Discrete collision-operator evaluation: brute force and DFT-accelerated.

With all cells identical, the Galerkin projection onto cell t reduces to
a bilinear convolution over cell indices against the generating-cell
tensor:

    I[i; t] = sum_{i',i''} sum_{j',j''} f[i'; j'+t-c] f[i''; j''+t-c]
              * A[i, i', i''; j', j'']

where c is the generating cell.  Out-of-domain cell indices either wrap
modulo M (circular, the periodic extension) or contribute zero
(zero-outside).  The circular form is diagonalized by the DFT: writing
Itld for the shift-indexed sequence, its forward transform satisfies

    F[Itld]_k = M^3 * sum_l Finv[f]_{k-l} * Finv[f]_l * F[A]_{k-l, l}

per (i, i', i'') slab, a weighted convolution in frequency space costing
O(s^9 M^6) instead of the O(s^9 M^9) literal sum.  DFT convention:
forward is the unnormalized W^{kn} sum with W = exp(-2 pi i / M); the
inverse carries 1/M per dimension (numpy's default, used verbatim).

Both engines accept a list of (left, right) field pairs so the
macro-micro decomposed assembly runs in a single accumulation pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    ConfigurationError,
    IncompatibleGridError,
    KernelFormatError,
    NumericalConsistencyError,
    SizingError,
)
from .distribution import DistributionField
from .grid import GridSpec, VelocityMesh
from .kernel import (
    DEFAULT_MEMORY_CAP,
    FORM_GAIN,
    FORM_NONSPLIT,
    KernelTensor,
    _FORM_CODES,
    _HEADER,
    _SPECTRAL_OFFSET,
    _pack_header,
    _unpack_header,
)
from .kernel import InteractionModel

#: fast path refuses outputs whose imaginary residue exceeds this times max|I|
IMAG_RESIDUE_LIMIT = 1e-6


def dft3(values: np.ndarray, direction: str) -> np.ndarray:
    """Cubic 3-D DFT; forward = W^{kn} sums, inverse carries 1/M per dim."""
    values = np.asarray(values)
    if values.ndim != 3 or len(set(values.shape)) != 1:
        raise ConfigurationError(f"dft3 expects a cubic M^3 array, got {values.shape}")
    if direction == "forward":
        return np.fft.fftn(values)
    if direction == "inverse":
        return np.fft.ifftn(values)
    raise ConfigurationError(f"direction must be 'forward' or 'inverse', got {direction!r}")


# ----------------------------------------------------------------------
# 1-D reference pair (the Lemma and its literal oracle)


def convolve_1d_reference(f: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Itld_j = sum_{j',j''} f_{j'-j} f_{j''-j} A_{j',j''}, indices mod M."""
    f = np.asarray(f, dtype=float)
    A = np.asarray(A, dtype=float)
    M = f.shape[0]
    out = np.empty(M)
    for j in range(M):
        fj = np.roll(f, j)  # fj[j'] = f[(j' - j) mod M]
        out[j] = fj @ A @ fj
    return out


def lemma_1d_fast(f: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Same sequence via F[Itld]_k = M sum_l Finv[f]_{k-l} Finv[f]_l F[A]_{k-l,l}."""
    f = np.asarray(f, dtype=float)
    A = np.asarray(A, dtype=float)
    M = f.shape[0]
    finv = np.fft.ifft(f)
    FA = np.fft.fft2(A)
    k = np.arange(M)
    kml = (k[:, None] - k[None, :]) % M  # (k, l) -> k-l
    FI = M * np.sum(finv[kml] * finv[None, :] * FA[kml, k[None, :]], axis=1)
    out = np.fft.ifft(FI)
    return out.real


# ----------------------------------------------------------------------
# spectral images


@dataclass
class SpectralField:
    """Finv[f_i] per local node, complex (s3, M, M, M)."""

    values: np.ndarray
    fingerprint: int


def spectral_transform_field(field: DistributionField) -> SpectralField:
    """Step 1 of the fast path: inverse DFT of the field per local node."""
    vals = np.fft.ifftn(field.values, axes=(1, 2, 3))
    return SpectralField(np.ascontiguousarray(vals), field.mesh.fingerprint)


@dataclass
class SpectralKernel:
    """F[A] in both cell triples, complex, same layout as KernelTensor."""

    form: str
    values: np.ndarray  # (s3, s3, s3, M^3, M^3) complex
    truncation_radius: float
    model: InteractionModel
    n_theta: int
    n_epsilon: int
    spec: GridSpec

    @property
    def fingerprint(self) -> int:
        return self.spec.fingerprint()


def spectral_transform_kernel(
    kernel: KernelTensor, max_bytes: int | None = None
) -> SpectralKernel:
    """Forward 3-D DFT of the tensor over j' and over j'' per (i,i',i'')."""
    cap = DEFAULT_MEMORY_CAP if max_bytes is None else int(max_bytes)
    if kernel.values.size * 16 > cap:
        raise SizingError(
            f"spectral kernel needs {kernel.values.size * 16 / 2**20:.1f} MiB complex, "
            f"cap is {cap / 2**20:.1f} MiB"
        )
    M = kernel.spec.cells_per_dim
    s3 = kernel.spec.nodes_per_cell
    grid9 = kernel.values.reshape(s3, s3, s3, M, M, M, M, M, M)
    fa = np.fft.fftn(grid9, axes=(3, 4, 5))
    fa = np.fft.fftn(fa, axes=(6, 7, 8))
    fa = np.ascontiguousarray(fa.reshape(s3, s3, s3, M**3, M**3))
    return SpectralKernel(
        kernel.form,
        fa,
        kernel.truncation_radius,
        kernel.model,
        kernel.n_theta,
        kernel.n_epsilon,
        kernel.spec,
    )


# ----------------------------------------------------------------------
# engine cores (serial numba loops; deterministic accumulation order)


@njit(cache=True)
def _direct_core(out, fl, fr, A, M, cu, cv, cw, circular):
    # out: (s3, M^3); fl, fr: (npairs, s3, M^3); A: (s3, s3, s3, M^3, M^3)
    # literal six-fold sum: per output cell, gather the shifted fields and
    # contract sum_{j1,j2} L[j1] A[j1,j2] R[j2] row by row
    npairs = fl.shape[0]
    s3 = out.shape[0]
    M3 = M * M * M
    sfl = np.empty((npairs, s3, M3))
    sfr = np.empty((npairs, s3, M3))
    src = np.empty(M3, dtype=np.int64)
    for t in range(M3):
        tu = t // (M * M)
        tv = (t // M) % M
        tw = t % M
        du = tu - cu
        dv = tv - cv
        dw = tw - cw
        idx = 0
        for ju in range(M):
            au = ju + du
            oku = True
            if au < 0:
                au += M
                oku = circular
            elif au >= M:
                au -= M
                oku = circular
            for jv in range(M):
                av = jv + dv
                okv = oku
                if av < 0:
                    av += M
                    okv = oku and circular
                elif av >= M:
                    av -= M
                    okv = oku and circular
                base = (au * M + av) * M
                for jw in range(M):
                    aw = jw + dw
                    okw = okv
                    if aw < 0:
                        aw += M
                        okw = okv and circular
                    elif aw >= M:
                        aw -= M
                        okw = okv and circular
                    src[idx] = base + aw if okw else -1
                    idx += 1
        for p in range(npairs):
            for i1 in range(s3):
                for j in range(M3):
                    sj = src[j]
                    if sj >= 0:
                        sfl[p, i1, j] = fl[p, i1, sj]
                        sfr[p, i1, j] = fr[p, i1, sj]
                    else:
                        sfl[p, i1, j] = 0.0
                        sfr[p, i1, j] = 0.0
        for i in range(s3):
            for i1 in range(s3):
                for i2 in range(s3):
                    tot = 0.0
                    for p in range(npairs):
                        acc = 0.0
                        for j1 in range(M3):
                            lv = sfl[p, i1, j1]
                            if lv != 0.0:
                                rsum = 0.0
                                for j2 in range(M3):
                                    rsum += A[i, i1, i2, j1, j2] * sfr[p, i2, j2]
                                acc += lv * rsum
                        tot += acc
                    out[i, t] += tot


@njit(cache=True)
def _step2_core(FI, Fl, Fr, FA, M, scale):
    # FI: (s3, M^3) complex accumulator of F[I_i];
    # Fl, Fr: (npairs, s3, M^3) complex; FA: (s3, s3, s3, M^3, M^3) complex
    npairs = Fl.shape[0]
    s3 = FI.shape[0]
    for i in range(s3):
        for i1 in range(s3):
            for i2 in range(s3):
                for ku in range(M):
                    for kv in range(M):
                        for kw in range(M):
                            kflat = (ku * M + kv) * M + kw
                            acc = 0.0 + 0.0j
                            for lu in range(M):
                                mu = ku - lu
                                if mu < 0:
                                    mu += M
                                for lv in range(M):
                                    mv = kv - lv
                                    if mv < 0:
                                        mv += M
                                    mbase = (mu * M + mv) * M
                                    lbase = (lu * M + lv) * M
                                    for lw in range(M):
                                        mw = kw - lw
                                        if mw < 0:
                                            mw += M
                                        mflat = mbase + mw
                                        lflat = lbase + lw
                                        s = 0.0 + 0.0j
                                        for p in range(npairs):
                                            s += Fl[p, i1, mflat] * Fr[p, i2, lflat]
                                        acc += s * FA[i, i1, i2, mflat, lflat]
                            FI[i, kflat] += scale * acc


@dataclass
class CollisionOutput:
    """Galerkin projections I_{i;j} on every cell (cell-indexed)."""

    mesh: VelocityMesh
    values: np.ndarray  # (s3, M, M, M)
    imag_residue: float = 0.0


def _check_pair_shapes(mesh, pairs):
    for left, right in pairs:
        if left.mesh.fingerprint != mesh.fingerprint or right.mesh.fingerprint != mesh.fingerprint:
            raise IncompatibleGridError("field pair lives on a different grid")


def direct_convolve_pairs(
    pairs, kernel: KernelTensor, wrap: str = "circular"
) -> CollisionOutput:
    """Literal six-fold sum, accumulated over the given (left, right) pairs."""
    if wrap not in ("circular", "zero-outside"):
        raise ConfigurationError(f"unknown wrap mode {wrap!r}")
    mesh = pairs[0][0].mesh
    if kernel.fingerprint != mesh.fingerprint:
        raise IncompatibleGridError("kernel was built for a different grid")
    _check_pair_shapes(mesh, pairs)
    M = mesh.cells_per_dim
    s3 = mesh.nodes_per_cell
    fl = np.ascontiguousarray(
        np.stack([p[0].values.reshape(s3, M**3) for p in pairs])
    )
    fr = np.ascontiguousarray(
        np.stack([p[1].values.reshape(s3, M**3) for p in pairs])
    )
    out = np.zeros((s3, M**3))
    cu, cv, cw = mesh.generating_cell
    _direct_core(out, fl, fr, kernel.values, M, cu, cv, cw, wrap == "circular")
    return CollisionOutput(mesh, out.reshape(s3, M, M, M))


def direct_convolve(
    field: DistributionField, kernel: KernelTensor, wrap: str = "circular"
) -> CollisionOutput:
    """Brute-force oracle: the six-fold sum with f on both slots."""
    return direct_convolve_pairs([(field, field)], kernel, wrap)


def fast_convolve_pairs(pairs, skernel: SpectralKernel, mesh: VelocityMesh) -> CollisionOutput:
    """Four-step DFT evaluation accumulated over (left, right) pairs.

    Steps: inverse-transform each field, run the weighted frequency
    convolution per (i,i',i'') summing over the node triples, then
    inverse-transform F[I_i] and map shift indices back to cells.
    """
    if skernel.fingerprint != mesh.fingerprint:
        raise IncompatibleGridError("spectral kernel was built for a different grid")
    M = mesh.cells_per_dim
    s3 = mesh.nodes_per_cell
    specs = []
    cache = {}
    for left, right in pairs:
        for f in (left, right):
            key = id(f)
            if key not in cache:
                if f.mesh.fingerprint != mesh.fingerprint:
                    raise IncompatibleGridError("field lives on a different grid")
                cache[key] = np.fft.ifftn(f.values, axes=(1, 2, 3)).reshape(s3, M**3)
        specs.append((cache[id(left)], cache[id(right)]))
    Fl = np.ascontiguousarray(np.stack([s[0] for s in specs]))
    Fr = np.ascontiguousarray(np.stack([s[1] for s in specs]))
    FI = np.zeros((s3, M**3), dtype=complex)
    _step2_core(FI, Fl, Fr, skernel.values, M, float(M**3))
    ishift = np.fft.ifftn(FI.reshape(s3, M, M, M), axes=(1, 2, 3))
    max_abs = float(np.max(np.abs(ishift.real)))
    residue = float(np.max(np.abs(ishift.imag)))
    if residue > IMAG_RESIDUE_LIMIT * max(max_abs, np.finfo(float).tiny):
        raise NumericalConsistencyError(
            f"imaginary residue {residue:.3e} exceeds {IMAG_RESIDUE_LIMIT:.0e} * max|I| = "
            f"{IMAG_RESIDUE_LIMIT * max_abs:.3e}"
        )
    # shift index j corresponds to output cell t = (c - j) mod M
    c = mesh.generating_cell
    idx = [(c[d] - np.arange(M)) % M for d in range(3)]
    cellwise = ishift.real[
        :, idx[0][:, None, None], idx[1][None, :, None], idx[2][None, None, :]
    ]
    return CollisionOutput(mesh, np.ascontiguousarray(cellwise), residue)


def fast_convolve(field: DistributionField, skernel: SpectralKernel) -> CollisionOutput:
    """O(s^9 M^6) evaluation; equals direct_convolve(..., 'circular')."""
    return fast_convolve_pairs([(field, field)], skernel, field.mesh)


# ----------------------------------------------------------------------
# spectral kernel persistence (same container, distinct form tag)


def save_spectral_kernel(skernel: SpectralKernel, path) -> None:
    header = _pack_header(
        _FORM_CODES[skernel.form] + _SPECTRAL_OFFSET,
        skernel.spec,
        skernel.model,
        skernel.truncation_radius,
        skernel.n_theta,
        skernel.n_epsilon,
        skernel.fingerprint,
        skernel.values.size,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(skernel.values.astype("<c16", copy=False).tobytes())


def load_spectral_kernel(path, mesh: VelocityMesh | None = None) -> SpectralKernel:
    with open(path, "rb") as fh:
        fields = _unpack_header(fh.read(_HEADER.size), path)
        payload = np.frombuffer(fh.read(), dtype="<c16")
    form_code = fields[2] - _SPECTRAL_OFFSET
    codes = {v: k for k, v in _FORM_CODES.items()}
    if form_code not in codes:
        raise KernelFormatError(f"{path} does not hold a spectral kernel")
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
        raise IncompatibleGridError(f"kernel in {path} was built for a different grid")
    s3 = spec.nodes_per_cell
    return SpectralKernel(
        codes[form_code],
        payload.reshape(s3, s3, s3, M**3, M**3).copy(),
        radius,
        InteractionModel(alpha, b0),
        n_theta,
        n_epsilon,
        spec,
    )
