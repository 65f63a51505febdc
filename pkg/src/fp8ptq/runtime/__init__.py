"""Model containers, graph execution, the PTQ pipeline and toy models."""

from .container import (
    LAYER_KINDS,
    LayerSpec,
    ModelContainer,
    load_model,
    save_model,
)
from .graph import FP32, QUANT_SIM, attach_params, collect_ranges, ptq, run
from .toys import (
    OutlierSpec,
    build_toy_encoder,
    encoder_input,
    make_dataset,
    mlp_loss_and_grads,
    train_toy_mlp,
)

__all__ = [
    "LAYER_KINDS",
    "LayerSpec",
    "ModelContainer",
    "load_model",
    "save_model",
    "FP32",
    "QUANT_SIM",
    "attach_params",
    "collect_ranges",
    "ptq",
    "run",
    "OutlierSpec",
    "build_toy_encoder",
    "encoder_input",
    "make_dataset",
    "mlp_loss_and_grads",
    "train_toy_mlp",
]
