"""Neural-network layers with hand-derived backward passes.

Layout is NHWC throughout.  Each layer caches what its backward pass needs,
so one layer instance serves one forward/backward pair at a time.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


class Layer:
    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_items(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(name, value, gradient) triples; empty for stateless layers."""
        return []


class Conv2D(Layer):
    """3x3-style same-padding convolution, stride 1, weights (k, k, Cin, Cout)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        self.k = kernel
        fan_in = kernel * kernel * in_ch
        fan_out = kernel * kernel * out_ch
        self.w = glorot_uniform(rng, (kernel, kernel, in_ch, out_ch), fan_in, fan_out)
        self.b = np.zeros(out_ch)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._windows = None

    def _win(self, x: np.ndarray) -> np.ndarray:
        pad = self.k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        # (N, H, W, C, k, k)
        return sliding_window_view(xp, (self.k, self.k), axis=(1, 2))

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._windows = self._win(x)
        out = np.tensordot(self._windows, self.w, axes=([3, 4, 5], [2, 0, 1]))
        return out + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.db = dout.sum(axis=(0, 1, 2))
        dw = np.tensordot(self._windows, dout, axes=([0, 1, 2], [0, 1, 2]))  # (C,k,k,out)
        self.dw = dw.transpose(1, 2, 0, 3)
        w_rot = self.w[::-1, ::-1, :, :]
        dwin = self._win(dout)                                   # (N,H,W,Cout,k,k)
        return np.tensordot(dwin, w_rot, axes=([3, 4, 5], [3, 0, 1]))

    def param_items(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, 0.0)


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/cols are cropped.
    Ties route the gradient to the first cell in window scan order."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, h, w, c = x.shape
        self._in_shape = x.shape
        ho, wo = h // 2, w // 2
        xc = x[:, :2 * ho, :2 * wo, :]
        win = xc.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, ho, wo, 4, c)
        self._argmax = win.argmax(axis=3)          # first max wins on ties
        self._win_shape = (n, ho, wo, c)
        return np.take_along_axis(win, self._argmax[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, ho, wo, c = self._win_shape
        dwin = np.zeros((n, ho, wo, 4, c))
        np.put_along_axis(dwin, self._argmax[:, :, :, None, :], dout[:, :, :, None, :], axis=3)
        dx = np.zeros(self._in_shape)
        dx[:, :2 * ho, :2 * wo, :] = (dwin.reshape(n, ho, wo, 2, 2, c)
                                      .transpose(0, 1, 3, 2, 4, 5)
                                      .reshape(n, 2 * ho, 2 * wo, c))
        return dx


class Flatten(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.w = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        self.b = np.zeros(n_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.dw = self._x.T @ dout
        self.db = dout.sum(axis=0)
        return dout @ self.w.T

    def param_items(self):
        return [("w", self.w, self.dw), ("b", self.b, self.db)]


class Softplus(Layer):
    """log(1 + exp(x)): smooth non-negative output head."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return np.logaddexp(0.0, x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        sig = np.empty_like(self._x)
        pos = self._x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-self._x[pos]))
        ex = np.exp(self._x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        return dout * sig
