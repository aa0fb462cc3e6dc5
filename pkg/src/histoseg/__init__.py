"""histoseg: nuclei segmentation for H&E histopathology slides using a
dual-view (local + global patch) convolutional encoder-decoder.

Subpackages follow the pipeline: core numerics, stain normalization,
patch extraction and stitching, the model, training, evaluation, and a
CLI wiring everything together.
"""

from .core import SeededRng, Tensor, load_png, mask_from_image, save_png, tensor_elementwise
from .errors import (
    ConfigError,
    DegenerateImageError,
    DivergenceError,
    HistosegError,
    MalformedPngError,
    PipelineStageError,
    ShapeMismatchError,
    SingularBasisError,
    StaleCacheError,
    UnsupportedPngError,
)
from .evaluation import (
    EvalReport,
    ImageRecord,
    binarize,
    dice_coefficient,
    evaluate_dataset,
    evaluate_image,
    predict_slide,
)
from .model import (
    Model,
    ModelConfig,
    backward,
    build_model,
    count_parameters,
    forward,
    load_model,
    predict_patch,
    save_model,
)
from .patching import (
    PatchGrid,
    PatchPair,
    extract_global_patch,
    extract_local_patch,
    extract_patch_pairs,
    plan_patch_grid,
    resize_bilinear,
    stitch_predictions,
)
from .stain import (
    StainParams,
    StainProfile,
    compute_concentrations,
    estimate_stain_basis,
    fit_target_profile,
    normalize_to_target,
    od_to_rgb,
    rgb_to_od,
)
from .training import (
    OptimizerState,
    TrainConfig,
    TrainingHistory,
    amsgrad_step,
    augment,
    hard_jaccard_distance,
    jaccard_distance_loss,
    train,
)

__version__ = "0.1.0"
