"""Point-cloud world engine: expandable world cache with visibility and
normal culling, partial RGB-D condition rendering, overlapping-clip
auto-regressive sampling behind a pluggable denoiser port, and disparity
least-squares depth alignment with quantile metric scaling."""

from .alignment import (
    AlignmentSolution,
    MetricScale,
    align_disparity,
    alignment_objective,
    apply_alignment,
    apply_metric,
    metric_scale,
)
from .cache import (
    CachedPoint,
    CullingConfig,
    UpdateStats,
    WorldCache,
    build_cache,
    cache_stats,
    init_cache,
    store_everything_cache,
    update_cache,
)
from .camera import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    RgbdFrame,
    estimate_normals,
    project,
    unproject,
    unproject_grid,
    view_direction,
)
from .condition import (
    ConditionFrame,
    PackedCondition,
    make_condition,
    pack_condition,
    unpack_condition,
    unpack_generated,
)
from .denoisers import (
    ExternProcessDenoiser,
    GroundTruthDenoiser,
    IdentityDenoiser,
    StochasticTestDenoiser,
)
from .errors import (
    DegenerateInputError,
    DenoiserContractError,
    DimensionMismatchError,
    EmptyInputError,
    FormatError,
    InvariantError,
    WorldEngineError,
)
from .sampler import (
    ClipSchedule,
    DenoiserPort,
    SampleResult,
    SamplerConfig,
    merge_overlap,
    plan_clips,
    run_autoregressive,
    seam_metrics,
)
from .splat import (
    RenderOutput,
    SplatConfig,
    Visibility,
    render_points,
    visibility_against_cache,
)

__version__ = "0.1.0"
