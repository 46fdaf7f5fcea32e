"""Dense numpy math with hand-written reverse-mode gradients.

Every differentiable piece follows the same convention: ``forward`` returns
``(output, cache)`` and ``backward(cache, grad_output)`` returns the gradient
with respect to the input while *accumulating* parameter gradients into the
``grad`` buffers. The graph is small and fixed, so chains are composed by hand
instead of through a tape.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64
NORM_EPS = 1e-12
ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity", "tanh")


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    trainable: bool = True

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class Module:
    """Anything holding Parameters, directly or through child modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, prefix + name)

    def parameters(self) -> Dict[str, Parameter]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


def _walk(value, path: str) -> Iterator[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{path}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{path}.{key}")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# elementwise / normalizing functions
# ---------------------------------------------------------------------------

def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=DTYPE)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, grad_y: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (grad_y - np.sum(grad_y * y, axis=axis, keepdims=True))


def masked_softmax(x: np.ndarray, valid: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax restricted to ``valid`` entries; invalid entries get weight 0.

    Slices with no valid entry come back as all zeros.
    """
    valid = np.asarray(valid, dtype=bool)
    z = np.where(valid, x, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(valid, np.exp(np.where(valid, z - m, 0.0)), 0.0)
    s = np.sum(e, axis=axis, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def l2_normalize(x: np.ndarray, axis: int = -1, eps: float = NORM_EPS) -> Tuple[np.ndarray, np.ndarray]:
    """Scale slices along ``axis`` to unit norm.

    Returns ``(y, norm)``. Slices with norm below ``eps`` pass through
    unchanged, so a zero vector stays zero.
    """
    x = np.asarray(x, dtype=DTYPE)
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    safe = np.where(norm < eps, 1.0, norm)
    return x / safe, norm


def l2_normalize_backward(y: np.ndarray, norm: np.ndarray, grad_y: np.ndarray,
                          axis: int = -1, eps: float = NORM_EPS) -> np.ndarray:
    small = norm < eps
    safe = np.where(small, 1.0, norm)
    g = (grad_y - y * np.sum(grad_y * y, axis=axis, keepdims=True)) / safe
    return np.where(small, grad_y, g)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        return softmax(z, axis=-1)
    raise ValueError(f"unknown activation {name!r}")


def activate_backward(name: str, z: np.ndarray, y: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    if name == "identity":
        return grad_y
    if name == "relu":
        return grad_y * (z > 0)
    if name == "sigmoid":
        return grad_y * y * (1.0 - y)
    if name == "tanh":
        return grad_y * (1.0 - y * y)
    if name == "softmax":
        return softmax_backward(y, grad_y, axis=-1)
    raise ValueError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# learnable blocks
# ---------------------------------------------------------------------------

class Linear(Module):
    """``y = x @ W + b`` over the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(glorot_uniform(rng, in_dim, out_dim))
        # nonzero biases keep a fully dead ReLU layer from emitting an exact zero vector
        bound = 1.0 / math.sqrt(in_dim)
        self.bias = Parameter(rng.uniform(-bound, bound, size=out_dim)) if bias else None

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"expected last dim {self.in_dim}, got {x.shape[-1]}")
        y = x @ self.weight.value
        if self.bias is not None:
            y = y + self.bias.value
        return y, x

    def backward(self, x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
        x2 = x.reshape(-1, self.in_dim)
        g2 = grad_y.reshape(-1, self.out_dim)
        self.weight.grad += x2.T @ g2
        if self.bias is not None:
            self.bias.grad += g2.sum(axis=0)
        return grad_y @ self.weight.value.T


class FeedForwardBlock(Module):
    """Stack of dense layers: hidden widths with ``hidden_activation``, then
    an output layer of ``out_dim`` units with ``output_activation``.

    The input width may be left as ``None``; it is bound from the first input
    seen, after which mismatched inputs raise :class:`DimensionError`.
    """

    def __init__(
        self,
        out_dim: int,
        hidden: Sequence[int] = (8, 4),
        in_dim: Optional[int] = None,
        hidden_activation: str = "relu",
        output_activation: str = "identity",
        rng: Optional[np.random.Generator] = None,
    ):
        for act in (hidden_activation, output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.widths = [int(w) for w in hidden] + [int(out_dim)]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.layers: list = []
        if in_dim is not None:
            self._build(in_dim)

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def _build(self, in_dim: int) -> None:
        self.in_dim = int(in_dim)
        dims = [self.in_dim] + self.widths
        self.layers = [Linear(dims[i], dims[i + 1], self._rng) for i in range(len(self.widths))]

    def _activation(self, i: int) -> str:
        return self.output_activation if i == len(self.layers) - 1 else self.hidden_activation

    def forward(self, x: np.ndarray):
        if not self.layers:
            self._build(x.shape[-1])
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"block bound to input width {self.in_dim}, got {x.shape[-1]}")
        caches = []
        h = x
        for i, layer in enumerate(self.layers):
            z, lc = layer.forward(h)
            h = activate(self._activation(i), z)
            caches.append((lc, z, h))
        return h, caches

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, caches, grad_y: np.ndarray) -> np.ndarray:
        g = grad_y
        for i in range(len(self.layers) - 1, -1, -1):
            lc, z, h = caches[i]
            g = activate_backward(self._activation(i), z, h, g)
            g = self.layers[i].backward(lc, g)
        return g


class Embedding(Module):
    """Lookup table; ids outside ``[0, vocab)`` fall back to row 0 (OOV)."""

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, scale: float = 0.1):
        self.vocab = int(vocab)
        self.dim = int(dim)
        self.table = Parameter(rng.normal(0.0, scale, size=(self.vocab, self.dim)))

    def lookup_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return np.where((ids >= 0) & (ids < self.vocab), ids, 0)

    def forward(self, ids):
        idx = self.lookup_ids(ids)
        return self.table.value[idx], idx

    def backward(self, idx: np.ndarray, grad_y: np.ndarray) -> None:
        np.add.at(self.table.grad, idx.reshape(-1), grad_y.reshape(-1, self.dim))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Batch-mean binary cross-entropy computed from logits.

    ``softplus(z) - y*z`` equals ``-y ln p - (1-y) ln(1-p)`` for ``p = sigmoid(z)``
    and never evaluates ``ln 0``. Returns ``(loss, dloss/dlogits)``.
    """
    z = np.asarray(logits, dtype=DTYPE)
    y = np.asarray(labels, dtype=DTYPE)
    n = z.size
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z) / n)
    return loss, (sigmoid(z) - y) / n


def binary_cross_entropy(p: np.ndarray, y: np.ndarray, eps: float = 1e-15) -> float:
    """BCE on probabilities, clipped away from 0 and 1."""
    p = np.clip(np.asarray(p, dtype=DTYPE), eps, 1.0 - eps)
    y = np.asarray(y, dtype=DTYPE)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)))


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def _check_finite(params: Mapping[str, Parameter]) -> None:
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")


class SGD:
    def __init__(self, lr: float = 0.01, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, params: Mapping[str, Parameter]) -> None:
        _check_finite(params)
        for p in params.values():
            if not p.trainable:
                continue
            if self.weight_decay:
                p.value -= self.lr * self.weight_decay * p.value
            p.value -= self.lr * p.grad


class Adam:
    """Adam with bias correction; ``weight_decay > 0`` gives decoupled (AdamW) decay."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Parameter]) -> None:
        _check_finite(params)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            if not p.trainable:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            if self.weight_decay:
                p.value -= self.lr * self.weight_decay * p.value
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


def make_optimizer(name: str, lr: float, weight_decay: float = 0.0):
    name = name.lower()
    if name == "sgd":
        return SGD(lr=lr, weight_decay=weight_decay)
    if name in ("adam", "adamw"):
        return Adam(lr=lr, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    checked: Dict[str, int]
    eps: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance


GRAD_CHECK_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_CHECK_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``.

    Central differences at eps=1e-5 resolve a float64 loss to roughly 1e-11
    absolute, so gradients far below ``floor`` are judged on absolute error.
    """
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    forward_backward: Callable[[], float],
    params: Mapping[str, Parameter],
    eps: float = 1e-5,
    loss_fn: Optional[Callable[[], float]] = None,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = GRAD_CHECK_FLOOR,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``forward_backward`` must compute the scalar loss and accumulate gradients
    into ``params``; ``loss_fn`` (defaults to ``forward_backward``) evaluates
    the loss alone. With ``max_entries`` set, that many entries per parameter
    are sampled instead of checking all of them.
    """
    loss_fn = loss_fn or forward_backward
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.zero_grad()
    forward_backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    errors: Dict[str, float] = {}
    checked: Dict[str, int] = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * eps)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric, floor)
        errors[name] = float(err.max()) if err.size else 0.0
        checked[name] = len(idx)
    for p in params.values():
        p.zero_grad()
    return GradCheckReport(errors=errors, checked=checked, eps=eps)


# ---------------------------------------------------------------------------
# checkpoint file
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"STIMCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: Mapping[str, Parameter], config: Optional[dict] = None) -> None:
    """Write ``magic | u64 header length | JSON header | float64 LE payload``.

    The header records the format version, the config and, per parameter path,
    its shape and byte offset into the payload.
    """
    entries = []
    offset = 0
    blobs = []
    for name, p in params.items():
        data = np.ascontiguousarray(p.value, dtype="<f8").tobytes()
        entries.append({"path": name, "shape": list(p.value.shape), "offset": offset, "nbytes": len(data)})
        offset += len(data)
        blobs.append(data)
    header = json.dumps(
        {"format_version": CHECKPOINT_VERSION, "config": config or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Inverse of :func:`save_checkpoint`; returns ``(config, {path: array})``."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        buf = raw[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        tensors[e["path"]] = np.frombuffer(buf, dtype="<f8").reshape(e["shape"]).astype(DTYPE)
    return header["config"], tensors
