"""Dense correspondence search over convolutional activation paths.

The pipeline: run a small convolutional hierarchy on two images, then
score every pixel/shift hypothesis by aggregating a per-neuron matching
function over all pairs of parallel activation paths — exponentially
many of them, folded in a single linear-time backward sweep — and read
the disparity out per pixel by winner-take-all.
"""

__version__ = "0.1.0"

from .aggregation import (
    CostVolume,
    aggregation_reach,
    backward,
    brute_force,
    count_arcs,
    count_paths,
    load_volume,
    save_volume,
)
from .grids import (
    Grid,
    ShiftSet,
    SubsampleChain,
    center_crop_multiple,
    gamma,
    load_image,
    subsample_shift,
    to_grayscale,
)
from .matching import m_conv, m_virtual
from .network import (
    CONV,
    POOL,
    ActivationStack,
    LayerSpec,
    NetworkSpec,
    VirtualLayer,
    attach_virtual_layer,
    forward,
    load_weights,
    save_weights,
)
from .semiring import Semiring, check_laws, make_semiring
from .stereo import (
    DisparityMap,
    EvalReport,
    corr_baseline,
    decode_disparity,
    encode_disparity,
    err_metric,
    lr_check,
    make_synthetic_pair,
    normalize,
    wta,
)

__all__ = [
    "ActivationStack",
    "CONV",
    "CostVolume",
    "DisparityMap",
    "EvalReport",
    "Grid",
    "LayerSpec",
    "NetworkSpec",
    "POOL",
    "Semiring",
    "ShiftSet",
    "SubsampleChain",
    "VirtualLayer",
    "aggregation_reach",
    "attach_virtual_layer",
    "backward",
    "brute_force",
    "center_crop_multiple",
    "check_laws",
    "corr_baseline",
    "count_arcs",
    "count_paths",
    "decode_disparity",
    "encode_disparity",
    "err_metric",
    "forward",
    "gamma",
    "load_image",
    "load_volume",
    "load_weights",
    "lr_check",
    "m_conv",
    "m_virtual",
    "make_semiring",
    "make_synthetic_pair",
    "normalize",
    "save_volume",
    "save_weights",
    "subsample_shift",
    "to_grayscale",
    "wta",
]
