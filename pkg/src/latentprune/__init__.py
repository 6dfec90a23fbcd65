"""Latent temporal-redundancy pruning with duplication-based attention recovery."""

from .attention import (
    HeadConfig,
    KVCache,
    ProjectionWeights,
    RoPEConfig,
    TokenSequence,
    cache_append,
    exact_attention,
    full_sequence_attention,
    rope_rotate,
    softmax_weights,
)
from .errors import LatentPruneError, NumericalCheckError, ValidationError
from .grids import (
    KeepMaskSequence,
    LatentGrid,
    PatchDims,
    PatchGrid,
    PruneConfig,
    patchify,
    unpatchify,
)
from .ltns import read_ltns, write_ltns
from .noisestats import (
    AggregationSweep,
    MomentReport,
    NoiseModel,
    aggregation_sweep,
    aggregation_variance,
    quadratic_form_moments,
)
from .pipeline import (
    CommutationReport,
    LatencyCurve,
    PipelineStats,
    ToyDenoiser,
    ToyDenoiserConfig,
    commutation_gap,
    latency_sweep,
    run_pipeline,
    toy_denoiser,
)
from .pruning import DiffMaskStage, diff_mask, lif_prune, long_term_offset, prune_rate
from .recovery import (
    RecoveryCacheMiss,
    RecoveryConfig,
    RecoveryErrorReport,
    Run,
    RunLengthPlan,
    build_plan,
    build_window_plan,
    expand_duplicates,
    partial_sum_bound_check,
    recovered_attention,
    recovery_error,
)
from .redundancy import (
    CompressionReport,
    DeltaField,
    PearsonReport,
    compress_latents,
    compression_sweep,
    pixel_latent_correlation,
    temporal_delta_l1,
)
from .restoration import PrunedPatchSet, extract_kept, restore

__version__ = "0.1.0"
