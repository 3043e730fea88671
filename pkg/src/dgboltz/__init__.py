"""Nodal-DG Boltzmann collision operator with DFT-accelerated evaluation."""

from .grid import (
    GaussRule,
    GridSpec,
    VelocityMesh,
    flatten_node_index,
    gauss_legendre,
    lagrange_eval,
)
from .distribution import (
    DistributionField,
    MaxwellianParams,
    MomentSet,
    directional_moment,
    macro_micro_decompose,
    maxwellian_eval,
    moments,
    sample_field,
    sample_maxwellian_sum,
)
from .kernel import (
    FORM_GAIN,
    FORM_NONSPLIT,
    CollisionFrequencyWeights,
    InteractionModel,
    KernelTensor,
    SphereQuadrature,
    collision_invariant_sums,
    kernel_entry,
    load_kernel,
    post_collision_velocities,
    precompute_kernel,
    save_kernel,
    sphere_quadrature,
)
from .convolution import (
    CollisionOutput,
    SpectralField,
    SpectralKernel,
    convolve_1d_reference,
    dft3,
    direct_convolve,
    direct_convolve_pairs,
    fast_convolve,
    fast_convolve_pairs,
    lemma_1d_fast,
    load_spectral_kernel,
    save_spectral_kernel,
    spectral_transform_field,
    spectral_transform_kernel,
)
from .solver import (
    FORM_SPLIT,
    CollisionEngine,
    MomentHistory,
    RelaxationConfig,
    ScenarioPreset,
    collision_rhs,
    integrate,
    output_moments,
    preset_scenario,
)

__version__ = "0.1.0"
