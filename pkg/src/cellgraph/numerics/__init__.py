from .tensor import (
    Tape, Tensor, param, constant, grad,
    add, sub, mul, affine, matmul, transpose,
    sigmoid, tanh, relu, log, power,
    row_softmax, concat_cols, take_cols, take_rows, set_rows,
    sum_rows, mean_rows, sum_all, mean_all,
    cosine_rows, dropout, cross_entropy_logits,
)
from .sparse import CsrMatrix, spmm, spmm_raw
from .optim import AdamState, adam_step
