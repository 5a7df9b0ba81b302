"""Open-world 3D object discovery toolkit.

Prior-driven multi-scale point sampling over RGB-D scenes, 2D-to-3D box
lifting, a cross-modal mixture-of-experts fusion kernel with verified
gradients, a deterministic synthetic scene generator, and class-agnostic
AR/AP evaluation. See the README for the CLI and file formats.
"""

__version__ = "0.1.0"

from .boxes import Box2D, Box3D, iou_2d, iou_3d, nms, points_in_box_2d
from .discovery import (
    DiscoveredBox,
    DiscoveryConfig,
    SamplingBudget,
    ScaleSchedule,
    SelectionSet,
    combine_priors,
    discover,
    filter_proposals,
    fuse_score,
    lift_box_2d_to_3d,
    propose_boxes,
    sample_multi_scale,
    sample_single_scale,
)
from .formats import (
    Annotation,
    FormatError,
    LabelRaster,
    MaskProposal,
    PriorRaster,
    Scene,
    load_scene,
)
from .geometry import (
    CameraModel,
    PixelPointIndex,
    PointCloud,
    back_project,
    build_pixel_point_index,
    pixel_distance_3d,
    project_points,
)
from .metrics import EvalReport, average_precision, average_recall, evaluate, match_greedy
from .moe import (
    AttentionParams,
    ExpertParams,
    MoEBlock,
    RouterGate,
    RouterParams,
    VoxelGridSpec,
    concat_modalities,
    fuse,
    grad_check,
    init_moe_block,
    moe_backward,
    moe_forward,
    moe_forward_cached,
    project_image_features,
    route,
    self_attention,
)
from .synth import FragmentSpec, SynthScene, SynthSpec, fragment_masks, generate

__all__ = [name for name in dir() if not name.startswith("_")]
