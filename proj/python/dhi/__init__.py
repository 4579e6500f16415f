"""Depth-aware hyper-involution operators and a two-stream RGB-D detector."""

from ._core import (
    DataError,
    Detector,
    InvalidArgument,
    NumericalError,
    average_precision,
    conv_flops,
    count_params,
    count_stored_params,
    depth_aware_hyper_involution,
    depth_weight,
    generate_dataset,
    gradient_suite,
    involution,
    iou,
    profile_model,
    weight_field,
)

__all__ = [
    "DataError",
    "Detector",
    "InvalidArgument",
    "NumericalError",
    "average_precision",
    "conv_flops",
    "count_params",
    "count_stored_params",
    "depth_aware_hyper_involution",
    "depth_weight",
    "generate_dataset",
    "gradient_suite",
    "involution",
    "iou",
    "profile_model",
    "weight_field",
]
