"""Feed-forward networks with hand-written reverse mode, Adam and Polyak averaging.

Parameters of an :class:`Mlp` live in one flat float64 vector, layer by
layer: the ``(n_in, n_out)`` weight matrix in row-major order followed by the
``n_out`` bias vector.  Hidden layers use ReLU (subgradient 0 at 0), the
output layer is affine.  Inputs are batches of row vectors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from dcil import kernels


def n_params_for(sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


class Mlp:
    def __init__(self, sizes: Sequence[int], params: np.ndarray | None = None,
                 rng: np.random.Generator | None = None, out_scale: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes!r}")
        n = n_params_for(self.sizes)
        if params is None:
            params = np.zeros(n)
            if rng is not None:
                _init_params(params, self.sizes, rng, out_scale)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters for sizes {self.sizes}, got {params.shape}")
        self.params = params
        self.weights, self.biases = _views(self.params, self.sizes)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def clone(self) -> Mlp:
        return Mlp(self.sizes, self.params.copy())

    def load_params(self, params: np.ndarray) -> None:
        self.params[:] = params

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        squeeze = x.ndim == 1
        h = np.ascontiguousarray(x[None, :] if squeeze else x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = kernels.dense_forward(h, w, b, i < last)
        return h[0] if squeeze else h

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass that also returns the layer inputs needed by :meth:`backward_cache`."""
        h = self._check(x)
        h = np.ascontiguousarray(h[None, :] if h.ndim == 1 else h)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = kernels.dense_forward(h, w, b, i < last)
        return h, cache

    def backward_cache(self, cache: list[np.ndarray], dy: np.ndarray,
                       grad_out: np.ndarray | None = None, need_params: bool = True):
        """Reverse pass; returns ``(param_grad, input_grad)``.

        ``param_grad`` is accumulated into ``grad_out`` when given (and is
        None when ``need_params`` is false).
        """
        dz = np.asarray(dy, dtype=np.float64)
        dz = np.ascontiguousarray(dz[None, :] if dz.ndim == 1 else dz)
        grad = None
        gws = gbs = [None] * len(self.weights)
        if need_params:
            grad = np.zeros(self.n_params) if grad_out is None else grad_out
            gws, gbs = _views(grad, self.sizes)
        for i in range(len(self.weights) - 1, -1, -1):
            dz = kernels.dense_backward(cache[i], self.weights[i], dz, gws[i], gbs[i], i > 0)
        return grad, dz


def _views(flat: np.ndarray, sizes: tuple[int, ...]):
    weights, biases = [], []
    off = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + a * b].reshape(a, b))
        off += a * b
        biases.append(flat[off:off + b])
        off += b
    return weights, biases


def _init_params(flat: np.ndarray, sizes: tuple[int, ...], rng: np.random.Generator,
                 out_scale: float) -> None:
    weights, _ = _views(flat, sizes)
    last = len(weights) - 1
    for i, w in enumerate(weights):
        fan_in = w.shape[0]
        # He-uniform for ReLU layers, fan-in uniform for the affine head
        limit = math.sqrt(6.0 / fan_in) if i < last else out_scale / math.sqrt(fan_in)
        w[:] = rng.uniform(-limit, limit, size=w.shape)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def backward(net: Mlp, x: np.ndarray, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(dy * net(x))`` w.r.t. the parameters and the input."""
    x = np.asarray(x, dtype=np.float64)
    y, cache = net.forward_cache(x)
    dy = np.asarray(dy, dtype=np.float64).reshape(y.shape)
    grad, dx = net.backward_cache(cache, dy)
    return grad, dx.reshape(x.shape)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, n: int, lr: float = 3e-4, **kw) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)

    def copy(self) -> AdamState:
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr,
                         self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam descent step, applied to ``params`` in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr * math.sqrt(1.0 - b2 ** state.t) / (1.0 - b1 ** state.t)
    # eps is applied to the bias-corrected second moment
    eps_hat = state.eps * math.sqrt(1.0 - b2 ** state.t)
    kernels.adam_update(params, np.ascontiguousarray(grads, dtype=np.float64),
                        state.m, state.v, step, b1, b2, eps_hat)
    return params


def polyak_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if target.sizes != source.sizes:
        raise ValueError("target and source shapes differ")
    if tau == 1.0:
        target.params[:] = source.params
    elif tau > 0.0:
        kernels.polyak(target.params, source.params, tau)
    return target


# --------------------------------------------------------------------------
# checkpoints


def save_mlp(net: Mlp, path: str | Path, seed: int | None = None, step: int = 0) -> None:
    header = {"format": "dcil-mlp", "version": 1, "sizes": list(net.sizes),
              "seed": seed, "step": int(step)}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), params=net.params)


def load_mlp(path: str | Path) -> tuple[Mlp, dict]:
    with np.load(path, allow_pickle=False) as data:
        try:
            header = json.loads(str(data["header"]))
            params = data["params"]
        except KeyError as exc:
            raise ValueError(f"{path}: not an mlp checkpoint ({exc})") from None
    if header.get("format") != "dcil-mlp":
        raise ValueError(f"{path}: wrong checkpoint format {header.get('format')!r}")
    net = Mlp(header["sizes"], params)
    if not np.all(np.isfinite(net.params)):
        raise ValueError(f"{path}: non-finite parameters")
    return net, header
