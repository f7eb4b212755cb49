"""Training machinery on top of the autodiff core.

Named parameters with Adam state, linear/MLP layers, Kaiming-uniform
initialization and the flat binary checkpoint format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import DecodeError

CHECKPOINT_MAGIC = b"PVIW"
CHECKPOINT_VERSION = 1


@dataclass
class Parameter:
    name: str
    value: Value
    m: np.ndarray = field(default=None)  # first moment
    v: np.ndarray = field(default=None)  # second moment
    step: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.value.data)
        if self.v is None:
            self.v = np.zeros_like(self.value.data)


class ParameterStore:
    """Flat registry of named parameters; the unit of checkpointing."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        p = Parameter(name, Value(np.asarray(data, dtype=np.float64), requires_grad=True))
        self._params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.value.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise DecodeError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in state.items():
            p = self._params[name]
            if arr.shape != p.value.data.shape:
                raise DecodeError(f"checkpoint shape mismatch for {name!r}")
            p.value.data = arr.astype(np.float64).copy()
            p.m = np.zeros_like(p.value.data)
            p.v = np.zeros_like(p.value.data)
            p.step = 0


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Kaiming-uniform fan-in init (gain sqrt(2) for ReLU networks)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine layer y = x W + b with Kaiming-uniform weights, zero bias."""

    def __init__(self, store: ParameterStore, name: str, c_in: int, c_out: int,
                 rng: np.random.Generator, zero_init: bool = False):
        w = np.zeros((c_in, c_out)) if zero_init else kaiming_uniform((c_in, c_out), c_in, rng)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(c_out))

    def __call__(self, x) -> Value:
        return ad.add(ad.matmul(x, self.w.value), self.b.value)


class MLP:
    """Stack of Linear layers with ReLU between (not after) them."""

    def __init__(self, store: ParameterStore, name: str, widths, rng: np.random.Generator):
        self.layers = [Linear(store, f"{name}.{i}", widths[i], widths[i + 1], rng)
                       for i in range(len(widths) - 1)]

    def __call__(self, x) -> Value:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = ad.relu(x)
        return x


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Standard Adam with bias correction; zeroes gradients afterwards."""
    for p in params:
        g = p.value.grad
        if g is None:
            g = np.zeros_like(p.value.data)
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.value.zero_grad()


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    """Write named arrays: magic, version u16, count u32, then per entry
    name length u16 + name + rank u8 + dims u32*rank + f64 LE payload."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(state)))
        for name, arr in state.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DecodeError("bad checkpoint magic")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DecodeError(f"unsupported checkpoint version {version}")
    pos = 10
    state: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(dims)
            pos += 8 * n
            state[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DecodeError("truncated checkpoint") from exc
    if pos != len(blob):
        raise DecodeError("trailing bytes in checkpoint")
    return state
