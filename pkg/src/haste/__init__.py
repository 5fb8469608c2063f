"""Training-free channel compression for convolutions via locality-sensitive hashing.

The operator hashes each input patch's channels with shared sparse ternary
hyperplanes, merges channels that collide (inputs by mean, filters by sum),
and runs the reduced convolution, trading a bounded approximation error for
fewer multiply-accumulates. The package also ships an exact FLOPs cost
model, a dense convolution oracle, a miniature container-based inference
runtime, and a CLI (`haste`).
"""

from .container import read_container, write_container
from .errors import (
    ConfigurationError,
    CorruptionError,
    FormatError,
    HasteError,
    ValidationError,
)
from .flops import (
    FlopsLedger,
    averaged_components,
    exact_components,
    flops_centering,
    flops_hashing,
    flops_merge_filters,
    flops_merge_fms,
    flops_reduced_conv,
    ledger_total,
)
from .lsh import HashConfig, HyperplaneSet, generate_hyperplanes, hash_batch, hash_vector
from .op import HasteConfig, HasteStats, haste_forward
from .runner import (
    EvalConfig,
    EvalReport,
    LayerSpec,
    ModelGraph,
    evaluate,
    load_dataset,
    load_model,
    predict_logits,
    save_dataset,
    save_model,
    swap_haste,
)
from .tensors import (
    FeatureMap,
    FilterBank,
    FlopCounter,
    PaddingSpec,
    conv2d_direct,
    mac_count_regular,
    pad,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CorruptionError",
    "EvalConfig",
    "EvalReport",
    "FeatureMap",
    "FilterBank",
    "FlopCounter",
    "FlopsLedger",
    "FormatError",
    "HashConfig",
    "HasteConfig",
    "HasteError",
    "HasteStats",
    "HyperplaneSet",
    "LayerSpec",
    "ModelGraph",
    "PaddingSpec",
    "ValidationError",
    "averaged_components",
    "conv2d_direct",
    "evaluate",
    "exact_components",
    "flops_centering",
    "flops_hashing",
    "flops_merge_filters",
    "flops_merge_fms",
    "flops_reduced_conv",
    "generate_hyperplanes",
    "hash_batch",
    "hash_vector",
    "haste_forward",
    "ledger_total",
    "load_dataset",
    "load_model",
    "mac_count_regular",
    "pad",
    "predict_logits",
    "read_container",
    "save_dataset",
    "save_model",
    "swap_haste",
    "write_container",
]
