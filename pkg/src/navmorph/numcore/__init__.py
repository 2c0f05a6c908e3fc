from navmorph.numcore.layers import (
    GRUCell,
    Linear,
    MLP,
    Parameter,
    ParameterSet,
    affine,
    gru_step,
    parse_checkpoint,
    sample_gaussian,
    save_checkpoint,
    softplus_floor,
    uniform_init,
)
from navmorph.numcore.optim import Adam, OptimizerState, optimizer_step
from navmorph.numcore.tensor import (
    Tape,
    Tensor,
    active_tape,
    backward,
    concat,
    matmul,
    no_grad,
    stack,
    tensor,
    zeros,
)

__all__ = [
    "Adam",
    "GRUCell",
    "Linear",
    "MLP",
    "OptimizerState",
    "Parameter",
    "ParameterSet",
    "Tape",
    "Tensor",
    "active_tape",
    "affine",
    "backward",
    "concat",
    "gru_step",
    "matmul",
    "no_grad",
    "optimizer_step",
    "parse_checkpoint",
    "sample_gaussian",
    "save_checkpoint",
    "softplus_floor",
    "stack",
    "tensor",
    "uniform_init",
    "zeros",
]
