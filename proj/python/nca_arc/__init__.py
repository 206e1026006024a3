"""Neural cellular automata trained per task on ARC grids."""

from ._core import (
    CheckpointError,
    DataError,
    ModelSpec,
    NonFiniteGradient,
    Params,
    Task,
    TrainConfig,
    TrainResult,
    classify,
    evaluate_task,
    filter_directory,
    grad_check,
    infer,
    init_params,
    load_checkpoint,
    load_task,
    lr_at,
    parse_task,
    pixel_accuracy,
    render_ascii,
    render_png,
    save_checkpoint,
    scaled_spiral_check,
    spiral,
    train_task,
)

__all__ = [name for name in dir() if not name.startswith("_")]
