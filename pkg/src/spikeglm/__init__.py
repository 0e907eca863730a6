"""Maximum-likelihood fitting of spiking-neuron models.

Binned spike trains are modeled as Poisson counts whose log-intensity is
linear in a stimulus filter, a spike-history filter, and a bias. The
package provides exact gradients and Hessians, a damped Newton fitter,
a space-time separable (rank-1 receptive field) variant, coupled
population models, a ground-truth simulator, and a CLI.
"""

from ._version import __version__
from .design import (
    Design,
    DesignRow,
    LagConfig,
    SpatioTemporalRow,
    SpikeTrain,
    Stimulus,
    assemble_design,
    build_lag_vector,
)
from .derivatives import Gradient, GradientCheck, check_gradient_fd, gradient, hessian
from .errors import (
    DataFormatError,
    DegenerateFilterError,
    DimensionMismatchError,
    InsufficientDataError,
    IntensityOverflowError,
    SpikeGlmError,
    StalledStepError,
)
from .likelihood import (
    GlmParams,
    bin_probability,
    conditional_intensity,
    log_likelihood,
)
from .network import (
    NeuronParams,
    PopulationData,
    UnfittableNeuron,
    coupling_gradient,
    fit_population,
    network_intensity,
    network_log_likelihood,
    neuron_hessian,
    neuron_log_likelihood,
)
from .optimize import (
    FitOptions,
    FitResult,
    StepDiagnostics,
    TracePoint,
    fit,
    initialize_params,
    newton_step,
)
from .separable import (
    SeparableGradient,
    SeparableParams,
    canonicalize,
    fit_separable,
    joint_hessian,
    separable_gradients,
    separable_intensity,
    separable_log_likelihood,
    space_time_cross_hessian,
)
from .simulate import (
    SimConfig,
    generate_stimulus,
    simulate_population,
    simulate_spike_train,
)

__all__ = [
    "__version__",
    "Design", "DesignRow", "LagConfig", "SpatioTemporalRow", "SpikeTrain",
    "Stimulus", "assemble_design", "build_lag_vector",
    "Gradient", "GradientCheck", "check_gradient_fd", "gradient", "hessian",
    "DataFormatError", "DegenerateFilterError", "DimensionMismatchError",
    "InsufficientDataError", "IntensityOverflowError", "SpikeGlmError",
    "StalledStepError",
    "GlmParams", "bin_probability", "conditional_intensity", "log_likelihood",
    "NeuronParams", "PopulationData", "UnfittableNeuron", "coupling_gradient",
    "fit_population", "network_intensity", "network_log_likelihood",
    "neuron_hessian", "neuron_log_likelihood",
    "FitOptions", "FitResult", "StepDiagnostics", "TracePoint", "fit",
    "initialize_params", "newton_step",
    "SeparableGradient", "SeparableParams", "canonicalize", "fit_separable",
    "joint_hessian", "separable_gradients", "separable_intensity",
    "separable_log_likelihood", "space_time_cross_hessian",
    "SimConfig", "generate_stimulus", "simulate_population",
    "simulate_spike_train",
]
