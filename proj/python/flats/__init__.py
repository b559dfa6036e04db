"""Python interface to the federated adversarial training simulator.

Everything heavy lives in the compiled ``flats._core`` extension; this package
re-exports it under friendlier names.
"""

from flats._core import (
    FlatsConfigError,
    FlatsFormatError,
    FlatsInputError,
    FlatsIoError,
    Model,
    accuracy,
    apply_brightness,
    config_keys,
    cross_entropy,
    default_config,
    degrade_pixels,
    fedavg,
    ffgsm,
    fgsm,
    input_gradient,
    load_idx,
    make_cnn,
    make_mlp,
    occlude_eyes,
    partition_iid,
    partition_noniid,
    robust_accuracy,
    run_experiment,
    square_attack,
    synth_dataset,
)

__all__ = [
    "FlatsConfigError",
    "FlatsFormatError",
    "FlatsInputError",
    "FlatsIoError",
    "Model",
    "accuracy",
    "apply_brightness",
    "config_keys",
    "cross_entropy",
    "default_config",
    "degrade_pixels",
    "fedavg",
    "ffgsm",
    "fgsm",
    "input_gradient",
    "load_idx",
    "make_cnn",
    "make_mlp",
    "occlude_eyes",
    "partition_iid",
    "partition_noniid",
    "robust_accuracy",
    "run_experiment",
    "square_attack",
    "synth_dataset",
]
