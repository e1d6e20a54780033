from .adam import AdamState, adam_step
from .checkpoint import dump_params, load_params
from .network import (
    NetworkSpec,
    NonFiniteLossError,
    ParameterStore,
    backward,
    forward,
    forward_graph,
    init_params,
    input_seed,
    make_input,
)
from .tensor import Tensor, backprop

__all__ = [
    "AdamState",
    "NetworkSpec",
    "NonFiniteLossError",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "backprop",
    "backward",
    "dump_params",
    "forward",
    "forward_graph",
    "init_params",
    "input_seed",
    "load_params",
    "make_input",
]
