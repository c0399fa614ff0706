from fecil._core import (
    ConfigError,
    FormatError,
    cutmix,
    evaluate_checkpoint,
    gradcheck,
    herding_select,
    run,
    sample_lambda,
    task_sequence,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "cutmix",
    "evaluate_checkpoint",
    "gradcheck",
    "herding_select",
    "run",
    "sample_lambda",
    "task_sequence",
]
