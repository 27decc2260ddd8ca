"""Rotation-equivariant conic convolution networks.

A numpy library implementing: convolution over conic regions with rotated
filters (exactly equivariant to quarter-turn input rotations), a
transition layer whose DFT-magnitude readout is exactly invariant to
those rotations, hand-derived backpropagation for every layer, a
Gaussian-mixture synthetic biomarker image generator, and a seeded
training/evaluation harness.
"""

from .conic import (
    Activation,
    ConicConvLayer,
    conic_backward,
    conic_forward,
    conic_pool_gaps,
    downsampled_extent,
    region_conv,
)
from .data import (
    LabeledDataset,
    load_amat,
    load_dataset,
    load_labels,
    save_dataset,
    save_labels,
    split_dataset,
)
from .geometry import (
    InterpScheme,
    RegionKind,
    RegionLabel,
    RegionMap,
    build_region_map,
    classify_point,
    rotate_filter,
)
from .network import (
    ConvSpec,
    EvalResult,
    Model,
    ModelConfig,
    TrainConfig,
    TrainResult,
    augment,
    build_model,
    cross_entropy,
    cross_entropy_batch,
    evaluate,
    forward,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    train,
    translate_image,
)
from .synthgen import (
    ClassSpec,
    GenParams,
    gaussian_blur,
    generate_dataset,
    generate_image,
    sample_class_specs,
    sample_point_cloud,
)
from .tensors import (
    FormatError,
    TRAIN_DTYPE,
    VERIFY_DTYPE,
    circular_shift,
    finite_diff_grad,
    load_tensor,
    make_rng,
    pad_spatial_to_odd,
    rot90,
    save_tensor,
    spawn_rngs,
)
from .transition import (
    TransitionLayer,
    dft2,
    dft2_magnitude,
    fc_head,
    transition_backward,
    transition_forward,
)

__version__ = "0.1.0"
