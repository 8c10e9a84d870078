from .autodiff import (
    Tensor, add, backward, concat, constant, conv2d, dense, dot_const, embedding_lookup, exp,
    gather_multi,
    gather_logprob, log_softmax, lstm_cell, matmul, maxpool2d, mul, parameter, relu, reshape,
    row_entropy, sigmoid, slice_cols, sub, sum_all, sum_rows, take_rows, tanh,
)
from .params import (
    CheckpointError, ParameterStore, load_into, read_checkpoint, save_checkpoint, sgd_momentum_step,
)
