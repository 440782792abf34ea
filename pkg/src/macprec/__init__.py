"""macprec: linear precoder design for the finite-alphabet MIMO MAC.

Library layout:

* :mod:`macprec.constellation` - signal sets, vector alphabets, complexity counts
* :mod:`macprec.channel`       - Weichselberger channel statistics and sampling
* :mod:`macprec.mi_engine`     - finite-alphabet MI / MMSE computations
* :mod:`macprec.replica`       - asymptotic-rate fixed point and WSR evaluation
* :mod:`macprec.optimizer`     - precoder optimization and baselines
* :mod:`macprec.harness`       - experiment runner (sweeps, regions, validation)
* :mod:`macprec.cli`           - command-line entry point
"""

from .channel import (
    ChannelRealization,
    SystemDims,
    WeichselbergerModel,
    correlation_matrices,
    kronecker_as_weichselberger,
    normalize_coupling,
    random_unitary,
    random_weichselberger,
    sample_channel,
    snr_to_power,
)
from .constellation import (
    Constellation,
    ConstellationKind,
    VectorAlphabet,
    count_additions,
    make_alphabet,
    make_constellation,
    vector_symbol,
)
from .errors import ConvergenceError, ResourceCapError, StaleStateError, ValidationFailure
from .mi_engine import (
    ExactMiEstimate,
    MonteCarloConfig,
    MseMatrices,
    NoiseEnsemble,
    deterministic_mi,
    exact_conditional_mi_mc,
    mi_gamma_partial,
    mmse_matrices,
)
from .optimizer import (
    OptimizerConfig,
    OptimizerTrace,
    PrecoderFactors,
    WsrProblem,
    gaussian_waterfilling_baseline,
    no_precoding_baseline,
    optimize,
    project_power,
    project_stiefel,
)
from .replica import (
    AsymptoticRate,
    FixedPointConfig,
    FixedPointState,
    asymptotic_conditional_mi,
    asymptotic_wsr,
    solve_fixed_point,
)

__version__ = "0.1.0"
