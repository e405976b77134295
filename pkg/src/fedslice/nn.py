"""Minimal dense network with exact reverse-mode gradients and Adam.

Rectifier hidden layers, linear output, float64 throughout. All parameters
of a network live in one contiguous vector with per-layer (weight, bias)
views, so optimizer steps, averaging, and serialization are single vector
operations. The byte format is layer shapes followed by row-major values,
stable across runs for checksum tests.
"""

from __future__ import annotations

import struct

import numpy as np

from fedslice.errors import ContractViolation


def _layer_views(flat: np.ndarray, sizes):
    views = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = flat[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = flat[offset : offset + fan_out]
        offset += fan_out
        views.append((w, b))
    return views, offset


def n_params(sizes) -> int:
    return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))


class ParamSet:
    """One feedforward network's parameters in a flat float64 vector.

    ``layers`` exposes (weight, bias) views into ``flat``; mutating either
    representation mutates the other.
    """

    def __init__(self, layers=None, *, sizes=None, flat=None):
        if layers is not None:
            sizes = [np.shape(w)[1] for w, _ in layers] + [np.shape(layers[-1][0])[0]]
            self.sizes = sizes
            self.flat = np.empty(n_params(sizes))
            self.layers, _ = _layer_views(self.flat, sizes)
            for (wv, bv), (w, b) in zip(self.layers, layers):
                w = np.asarray(w, dtype=float)
                b = np.asarray(b, dtype=float)
                if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                    raise ContractViolation("layer has inconsistent shapes")
                if wv.shape != w.shape:
                    raise ContractViolation("layers do not chain correctly")
                wv[:] = w
                bv[:] = b
        else:
            self.sizes = list(sizes)
            want = n_params(self.sizes)
            if flat is None:
                flat = np.zeros(want)
            flat = np.ascontiguousarray(flat, dtype=float)
            if flat.size != want:
                raise ContractViolation("flat vector does not match layer sizes")
            self.flat = flat
            self.layers, _ = _layer_views(self.flat, self.sizes)

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "ParamSet":
        """Fan-in-scaled uniform init for the chain of layer sizes."""
        params = cls(sizes=sizes)
        for w, b in params.layers:
            bound = 1.0 / np.sqrt(w.shape[1])
            w[:] = rng.uniform(-bound, bound, size=w.shape)
            b[:] = rng.uniform(-bound, bound, size=b.shape)
        return params

    @classmethod
    def zeros_like(cls, other: "ParamSet") -> "ParamSet":
        return cls(sizes=other.sizes)

    def copy(self) -> "ParamSet":
        return ParamSet(sizes=self.sizes, flat=self.flat.copy())

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.sizes == other.sizes and np.array_equal(self.flat, other.flat)


class GradientSet(ParamSet):
    """Per-parameter partials, shape-congruent with its ParamSet."""


def forward(params: ParamSet, x: np.ndarray):
    """Network output plus the activation cache needed by ``backward``.

    ``x`` is one input vector or a (batch, in) matrix; the output matches.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != params.sizes[0]:
        raise ContractViolation(
            f"input dimension {a.shape[1]} does not match network "
            f"input {params.sizes[0]}"
        )
    activations = [a]
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = a @ w.T
        z += b
        a = np.maximum(z, 0.0, out=z) if i != last else z
        activations.append(a)
    cache = (id(params), activations)
    return (a[0] if single else a), cache


def backward(params: ParamSet, cache, out_grad: np.ndarray,
             into: GradientSet | None = None) -> GradientSet:
    """Exact gradients of sum(output * out_grad) w.r.t. every parameter."""
    owner, activations = cache
    if owner != id(params) or len(activations) != len(params.layers) + 1:
        raise ContractViolation("cache does not belong to these parameters")
    g = np.asarray(out_grad, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != activations[-1].shape:
        raise ContractViolation("output gradient shape mismatch")
    grads = into if into is not None else GradientSet(sizes=params.sizes)
    for i in range(len(params.layers) - 1, -1, -1):
        dw, db = grads.layers[i]
        np.matmul(g.T, activations[i], out=dw)
        g.sum(axis=0, out=db)
        if i > 0:
            g = (g @ params.layers[i][0]) * (activations[i] > 0.0)
    return grads


class AdamState:
    """First/second moment accumulators over the flat parameter vector."""

    def __init__(self, params: ParamSet, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = np.zeros_like(params.flat)
        self.v = np.zeros_like(params.flat)
        self._tmp = np.zeros_like(params.flat)


def adam_step(params: ParamSet, grads: GradientSet, state: AdamState,
              direction: str = "descent"):
    """One adaptive-moment update; ``direction`` picks ascent or descent."""
    if direction not in ("ascent", "descent"):
        raise ContractViolation("direction must be 'ascent' or 'descent'")
    if grads.flat.shape != params.flat.shape:
        raise ContractViolation("gradient shape mismatch")
    sign = -1.0 if direction == "descent" else 1.0
    state.step_count += 1
    c1 = 1.0 - state.beta1**state.step_count
    c2 = 1.0 - state.beta2**state.step_count
    g = grads.flat
    tmp = state._tmp
    state.m *= state.beta1
    np.multiply(g, 1.0 - state.beta1, out=tmp)
    state.m += tmp
    state.v *= state.beta2
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - state.beta2
    state.v += tmp
    np.divide(state.v, c2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += state.eps
    np.divide(state.m, tmp, out=tmp)
    tmp *= sign * state.lr / c1
    params.flat += tmp
    return params, state


_MAGIC = b"FSP1"


def serialize(params: ParamSet) -> bytes:
    """Byte-stable flat encoding: shapes header then row-major float64 values."""
    chunks = [_MAGIC, struct.pack("<I", len(params.layers))]
    for w, _ in params.layers:
        chunks.append(struct.pack("<II", w.shape[0], w.shape[1]))
    chunks.append(np.ascontiguousarray(params.flat, dtype="<f8").tobytes())
    return b"".join(chunks)


def deserialize(blob: bytes) -> ParamSet:
    if blob[:4] != _MAGIC:
        raise ContractViolation("not a serialized parameter set")
    (n_layers,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", blob, offset))
        offset += 8
    sizes = [shapes[0][1]] + [out for out, _ in shapes]
    for i in range(1, n_layers):
        if shapes[i][1] != shapes[i - 1][0]:
            raise ContractViolation("serialized layer shapes do not chain")
    count = n_params(sizes)
    flat = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    if offset + count * 8 != len(blob):
        raise ContractViolation("trailing bytes in serialized parameter set")
    return ParamSet(sizes=sizes, flat=flat.copy())
