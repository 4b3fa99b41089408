"""Tiny NHWC network layers with hand-written backward passes.

Each layer caches what it needs in ``forward`` and returns input and
parameter gradients from ``backward``. Layers whose pre-activation is linear
in the input also expose ``tangent`` (the forward-mode push of an input
perturbation) and ``weight_grad`` (parameter gradient for a given input and
output cotangent); the discriminator's R1 term is built from those two.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAK = 0.2


def he_normal(rng, fan_in, shape, gain=np.sqrt(2.0)):
    return rng.standard_normal(shape) * (gain / np.sqrt(fan_in))


class Dense:
    def __init__(self, name, n_in, n_out, rng, zero=False):
        self.name = name
        self.params = {
            f"{name}.w": np.zeros((n_in, n_out)) if zero else he_normal(rng, n_in, (n_in, n_out), 1.0),
            f"{name}.b": np.zeros(n_out),
        }

    @property
    def w(self):
        return self.params[f"{self.name}.w"]

    def forward(self, x):
        self.x = x
        return x @ self.w + self.params[f"{self.name}.b"]

    def tangent(self, xdot):
        return xdot @ self.w

    def weight_grad(self, x, gy):
        return {f"{self.name}.w": x.T @ gy, f"{self.name}.b": np.zeros_like(self.params[f"{self.name}.b"])}

    def backward(self, gy):
        grads = {f"{self.name}.w": self.x.T @ gy, f"{self.name}.b": gy.sum(axis=0)}
        return gy @ self.w.T, grads


def _im2col(x, k, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    b, ho, wo = win.shape[:3]
    return win.reshape(b * ho * wo, -1), (b, ho, wo), x.shape


def _col2im(dcols, padded_shape, k, stride, pad, ho, wo):
    b, hp, wp, c = padded_shape
    d = dcols.reshape(b, ho, wo, c, k, k)
    dx = np.zeros(padded_shape)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += d[..., i, j]
    if pad:
        dx = dx[:, pad:hp - pad, pad:wp - pad, :]
    return dx


class Conv2d:
    """k×k convolution (cross-correlation), NHWC, weights as (c_in·k·k) × c_out."""

    def __init__(self, name, c_in, c_out, rng, k=3, stride=1, pad=None):
        self.name, self.k, self.stride = name, k, stride
        self.pad = k // 2 if pad is None else pad
        self.c_out = c_out
        fan_in = c_in * k * k
        self.params = {f"{name}.w": he_normal(rng, fan_in, (fan_in, c_out)), f"{name}.b": np.zeros(c_out)}

    @property
    def w(self):
        return self.params[f"{self.name}.w"]

    def _apply(self, x):
        cols, (b, ho, wo), pshape = _im2col(x, self.k, self.stride, self.pad)
        return cols, (b, ho, wo), pshape

    def forward(self, x):
        self.cols, (b, ho, wo), self.pshape = self._apply(x)
        self.oshape = (b, ho, wo)
        return (self.cols @ self.w + self.params[f"{self.name}.b"]).reshape(b, ho, wo, self.c_out)

    def tangent(self, xdot):
        cols, (b, ho, wo), _ = self._apply(xdot)
        return (cols @ self.w).reshape(b, ho, wo, self.c_out)

    def weight_grad(self, x, gy):
        cols, _, _ = self._apply(x)
        g2 = gy.reshape(-1, self.c_out)
        return {f"{self.name}.w": cols.T @ g2, f"{self.name}.b": np.zeros(self.c_out)}

    def backward(self, gy):
        g2 = gy.reshape(-1, self.c_out)
        grads = {f"{self.name}.w": self.cols.T @ g2, f"{self.name}.b": g2.sum(axis=0)}
        b, ho, wo = self.oshape
        dx = _col2im(g2 @ self.w.T, self.pshape, self.k, self.stride, self.pad, ho, wo)
        return dx, grads


class LeakyReLU:
    params: dict = {}

    def __init__(self, slope=LEAK):
        self.slope = slope

    def forward(self, x):
        self.scale = np.where(x > 0, 1.0, self.slope)
        return x * self.scale

    def tangent(self, xdot):
        return xdot * self.scale

    def backward(self, gy):
        return gy * self.scale, {}


class Upsample2x:
    params: dict = {}

    def forward(self, x):
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, gy):
        b, h, w, c = gy.shape
        return gy.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4)), {}


class Sigmoid:
    params: dict = {}

    def forward(self, x):
        self.y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.y

    def backward(self, gy):
        return gy * self.y * (1.0 - self.y), {}


class Reshape:
    params: dict = {}

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def tangent(self, xdot):
        return xdot.reshape((xdot.shape[0],) + self.shape)

    def backward(self, gy):
        return gy.reshape(self.in_shape), {}


class Sequential:
    def __init__(self, layers):
        self.layers = layers

    @property
    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.params)
        return out

    def set_params(self, new: dict) -> None:
        for layer in self.layers:
            for key in layer.params:
                if key not in new:
                    raise KeyError(f"missing parameter '{key}'")
                if new[key].shape != layer.params[key].shape:
                    raise ValueError(f"parameter '{key}' has shape {new[key].shape}, "
                                     f"expected {layer.params[key].shape}")
                layer.params[key] = np.array(new[key], dtype=np.float64)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, gy):
        grads = {}
        for layer in reversed(self.layers):
            gy, g = layer.backward(gy)
            grads.update(g)
        return gy, grads
