"""MOSformer: momentum dual-encoder 2.5D segmentation with cross-slice window attention."""

from mosformer._core import (
    cyclic_shift,
    dsc,
    evaluate,
    evaluate_labels,
    gen_phantoms,
    gradcheck,
    hd95,
    init_checkpoint,
    layer_norm,
    load_labels,
    load_volume,
    lr_at,
    matmul,
    momentum_blend,
    predict,
    relative_position_index,
    save_volume,
    set_threads,
    softmax_lastdim,
    train,
)

__all__ = [
    "cyclic_shift",
    "dsc",
    "evaluate",
    "evaluate_labels",
    "gen_phantoms",
    "gradcheck",
    "hd95",
    "init_checkpoint",
    "layer_norm",
    "load_labels",
    "load_volume",
    "lr_at",
    "matmul",
    "momentum_blend",
    "predict",
    "relative_position_index",
    "save_volume",
    "set_threads",
    "softmax_lastdim",
    "train",
]

__version__ = "0.1.0"
