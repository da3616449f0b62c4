"""Mixture of finite mixtures: partition distribution, samplers and summaries."""

__version__ = "0.1.0"

from .models import (  # noqa: E402
    DiagonalGaussianModel,
    MvnIndepWishartModel,
    RichardsonGreenModel,
    synth_three_component,
)
from .partitions import (  # noqa: E402
    Geometric,
    PartitionShape,
    PoissonShifted,
    PriorConfig,
    TablePk,
    UniformRange,
    build_vn_table,
    eppf_log,
    k_posterior_from_t,
)
from .samplers import SamplerSchedule, run_chain  # noqa: E402
from .summaries import t_pmf_from_trace  # noqa: E402
