"""Convolutional embedding network written directly in numpy.

Topology: three (3x3 conv, pad 1, stride 1) -> batch norm -> ReLU blocks,
a 2x2 average pool, flatten, then three dense layers (ReLU, ReLU, linear).
Activations are laid out as (batch, rows, cols, channels). Convolutions
are evaluated as an im2col matrix product.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointError, ShapeError, TrainingError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
MAGIC = b"CFRSNET\x00"
VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int] = (310, 240, 3)
    conv_widths: tuple[int, ...] = (4, 8, 8)
    dense_widths: tuple[int, ...] = (256, 128, 16)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_widths", tuple(int(v) for v in self.conv_widths))
        object.__setattr__(self, "dense_widths", tuple(int(v) for v in self.dense_widths))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input shape must be (rows, cols, channels), got {self.input_shape}")
        if min(self.input_shape[:2]) < 2:
            raise ShapeError("input too small for 2x2 pooling")

    @property
    def embedding_size(self) -> int:
        return self.dense_widths[-1]

    @property
    def pooled_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.input_shape
        return (h // 2, w // 2, self.conv_widths[-1])

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-sample output shape of every layer, in order."""
        h, w, _ = self.input_shape
        out = [(f"conv{k + 1}", (h, w, c)) for k, c in enumerate(self.conv_widths)]
        out.append(("avgpool", self.pooled_shape))
        out.append(("flatten", (int(np.prod(self.pooled_shape)),)))
        out += [(f"dense{k + 1}", (d,)) for k, d in enumerate(self.dense_widths)]
        return out

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter and buffer tensors in checkpoint declaration order."""
        shapes = []
        cin = self.input_shape[2]
        for k, c in enumerate(self.conv_widths, 1):
            shapes += [
                (f"conv{k}.w", (cin, 3, 3, c)), (f"conv{k}.b", (c,)),
                (f"bn{k}.gamma", (c,)), (f"bn{k}.beta", (c,)),
                (f"bn{k}.mean", (c,)), (f"bn{k}.var", (c,)),
            ]
            cin = c
        fan = int(np.prod(self.pooled_shape))
        for k, d in enumerate(self.dense_widths, 1):
            shapes += [(f"dense{k}.w", (fan, d)), (f"dense{k}.b", (d,))]
            fan = d
        return shapes

    def trainable(self) -> list[str]:
        return [n for n, _ in self.param_shapes() if not n.endswith((".mean", ".var"))]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()


@dataclass
class NetworkParams:
    spec: NetworkSpec
    tensors: dict[str, np.ndarray]
    training: bool = False
    dtype: type = field(default=np.float32)

    def __post_init__(self):
        for name, shape in self.spec.param_shapes():
            if name not in self.tensors:
                raise ShapeError(f"missing parameter {name}")
            t = np.ascontiguousarray(self.tensors[name], dtype=self.dtype)
            if t.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {t.shape}")
            self.tensors[name] = t

    @classmethod
    def initialize(cls, spec: NetworkSpec = NetworkSpec(), seed: int = 0,
                   dtype: type = np.float32) -> NetworkParams:
        """He-scaled normal weights, zero biases, unit BatchNorm scale."""
        rng = np.random.default_rng(seed)
        t = {}
        for name, shape in spec.param_shapes():
            kind = name.split(".")[1]
            if kind == "w":
                fan_in = int(np.prod(shape[:-1]))
                t[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
            elif kind in ("gamma", "var"):
                t[name] = np.ones(shape)
            else:
                t[name] = np.zeros(shape)
        return cls(spec, t, dtype=dtype)

    def copy(self) -> NetworkParams:
        return NetworkParams(self.spec, {k: v.copy() for k, v in self.tensors.items()},
                             self.training, self.dtype)

    def astype(self, dtype) -> NetworkParams:
        return NetworkParams(self.spec, {k: v.astype(dtype) for k, v in self.tensors.items()},
                             self.training, dtype)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def save(self, path: str | Path) -> None:
        spec_json = self.spec.to_json().encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(self.spec.digest())
            fh.write(struct.pack("<I", len(spec_json)))
            fh.write(spec_json)
            for name, _ in self.spec.param_shapes():
                fh.write(self.tensors[name].astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path, spec: NetworkSpec | None = None) -> NetworkParams:
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        if data[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a network checkpoint")
        try:
            (version,) = struct.unpack_from("<I", data, 8)
            digest = data[12:44]
            (n,) = struct.unpack_from("<I", data, 44)
            stored = NetworkSpec(**json.loads(data[48:48 + n]))
        except (struct.error, ValueError, TypeError) as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        if digest != stored.digest():
            raise CheckpointError(f"{path}: spec hash mismatch")
        if spec is not None and spec != stored:
            raise CheckpointError(f"{path}: checkpoint was written for {stored}, expected {spec}")
        off = 48 + n
        tensors = {}
        for name, shape in stored.param_shapes():
            size = int(np.prod(shape)) * 4
            if off + size > len(data):
                raise CheckpointError(f"{path}: truncated at {name}")
            tensors[name] = np.frombuffer(data, "<f4", int(np.prod(shape)), off).reshape(shape)
            off += size
        if off != len(data):
            raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
        return cls(stored, tensors)


def prepare_input(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 RGB (or gray, replicated) image to a float array scaled to [0, 1]."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    x = a.astype(dtype)
    if a.dtype == np.uint8:
        x /= 255.0
    return x


def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # n, h, w, c, 3, 3
    return win.reshape(n * h * w, c * 9)


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, h, w, c = shape
    d = dcols.reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, h + 2, w + 2, c), dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + w, :] += d[..., i, j]
    return dxp[:, 1:-1, 1:-1, :]


class EmbeddingNet:
    """Forward/backward passes over a :class:`NetworkParams`."""

    def __init__(self, params: NetworkParams):
        self.params = params
        self.spec = params.spec
        self._cache: dict | None = None

    # forward ------------------------------------------------------------
    def forward(self, x: np.ndarray, record: list | None = None) -> np.ndarray:
        """Embeddings for a batch ``(N, rows, cols, channels)``.

        ``record`` (a list) receives ``(layer, per-sample shape)`` for every
        layer. In training mode batch statistics are used, running
        statistics updated and intermediates kept for :meth:`backward`.
        """
        p = self.params
        spec = self.spec
        x = np.asarray(x, dtype=p.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != spec.input_shape:
            raise ShapeError(f"conv1: expected input {spec.input_shape}, got {x.shape[1:]}")
        training = p.training
        cache: dict = {}
        n = x.shape[0]
        h = x
        for k in range(1, len(spec.conv_widths) + 1):
            cols = _im2col(h)
            wmat = p[f"conv{k}.w"].reshape(-1, p[f"conv{k}.w"].shape[-1])
            z = cols @ wmat
            z += p[f"conv{k}.b"]
            gamma, beta = p[f"bn{k}.gamma"], p[f"bn{k}.beta"]
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                rm, rv = p[f"bn{k}.mean"], p[f"bn{k}.var"]
                rm *= BN_MOMENTUM
                rm += (1 - BN_MOMENTUM) * mu
                rv *= BN_MOMENTUM
                rv += (1 - BN_MOMENTUM) * var
            else:
                mu, var = p[f"bn{k}.mean"], p[f"bn{k}.var"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            a = zhat * gamma + beta
            np.maximum(a, 0, out=a)
            if training:
                cache[f"conv{k}"] = (h.shape, cols, zhat, inv, a > 0)
            h = a.reshape(n, *h.shape[1:3], -1)
            if record is not None:
                record.append((f"conv{k}", h.shape[1:]))
        hh, ww = h.shape[1] // 2, h.shape[2] // 2
        cache["pool_in"] = h.shape
        h = h[:, :2 * hh, :2 * ww].reshape(n, hh, 2, ww, 2, -1).mean(axis=(2, 4))
        if record is not None:
            record.append(("avgpool", h.shape[1:]))
        h = h.reshape(n, -1)
        if record is not None:
            record.append(("flatten", h.shape[1:]))
        nd = len(spec.dense_widths)
        for k in range(1, nd + 1):
            if training:
                cache[f"dense{k}"] = h
            h = h @ p[f"dense{k}.w"] + p[f"dense{k}.b"]
            if k < nd:
                np.maximum(h, 0, out=h)
            if record is not None:
                record.append((f"dense{k}", h.shape[1:]))
        if training:
            cache["out"] = h
            self._cache = cache
        return h

    def embed(self, img: np.ndarray) -> np.ndarray:
        """Inference-mode 16-vector (float64) for a single image."""
        was = self.params.training
        self.params.training = False
        try:
            e = self.forward(prepare_input(img, self.params.dtype)[None])[0]
        finally:
            self.params.training = was
        return e.astype(np.float64)

    # backward -----------------------------------------------------------
    def backward(self, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given ``dL/d(embeddings)``."""
        if self._cache is None:
            raise TrainingError("backward called without a training-mode forward pass")
        p = self.params
        spec = self.spec
        cache = self._cache
        grads: dict[str, np.ndarray] = {}
        g = np.asarray(d_out, dtype=p.dtype)
        nd = len(spec.dense_widths)
        for k in range(nd, 0, -1):
            inp = cache[f"dense{k}"]
            grads[f"dense{k}.w"] = inp.T @ g
            grads[f"dense{k}.b"] = g.sum(axis=0)
            g = g @ p[f"dense{k}.w"].T
            if k > 1:
                g *= inp > 0  # ReLU of the previous dense layer
        n = g.shape[0]
        hh, ww, c = spec.pooled_shape
        g = g.reshape(n, hh, 1, ww, 1, c) * 0.25
        g = np.broadcast_to(g, (n, hh, 2, ww, 2, c)).reshape(n, 2 * hh, 2 * ww, c)
        pin = cache["pool_in"]
        if pin[1] != 2 * hh or pin[2] != 2 * ww:
            full = np.zeros(pin, g.dtype)
            full[:, :2 * hh, :2 * ww] = g
            g = full
        for k in range(len(spec.conv_widths), 0, -1):
            in_shape, cols, zhat, inv, mask = cache[f"conv{k}"]
            ga = g.reshape(-1, g.shape[-1]) * mask
            grads[f"bn{k}.beta"] = ga.sum(axis=0)
            grads[f"bn{k}.gamma"] = (ga * zhat).sum(axis=0)
            gz = ga * p[f"bn{k}.gamma"]
            m = gz.shape[0]
            gz = inv / m * (m * gz - gz.sum(axis=0) - zhat * (gz * zhat).sum(axis=0))
            grads[f"conv{k}.b"] = gz.sum(axis=0)
            w = p[f"conv{k}.w"]
            grads[f"conv{k}.w"] = (cols.T @ gz).reshape(w.shape)
            if k > 1:
                g = _col2im(gz @ w.reshape(-1, w.shape[-1]).T, in_shape)
        self._cache = None
        return grads


