from .core import (Adam, Conv2d, Dense, activate, collect, conv2d,
                   conv2d_backward, dense_forward, mse, mse_grad,
                   optimizer_step, sigmoid, softmax, softmax_backward)
from .lstm import LSTMLayer, StackedLSTM, lstm_forward, lstm_step

__all__ = [
    "Adam", "Conv2d", "Dense", "LSTMLayer", "StackedLSTM", "activate",
    "collect", "conv2d", "conv2d_backward", "dense_forward", "lstm_forward",
    "lstm_step", "mse", "mse_grad", "optimizer_step", "sigmoid", "softmax",
    "softmax_backward",
]
