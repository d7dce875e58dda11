"""Parameter containers, Adam, time embeddings, and checkpoint serialization."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, parameter


class StateError(RuntimeError):
    """Optimizer/model state misuse (missing gradients, untrained models)."""


class ConfigurationError(ValueError):
    """Invalid hyperparameter or configuration value."""


class ParameterSet:
    """Named, ordered map of trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise StateError(f"duplicate parameter name: {name}")
        t = parameter(data, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.items():
            if name not in arrays:
                raise StateError(f"checkpoint missing parameter: {name}")
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != p.data.shape:
                raise StateError(f"shape mismatch for {name}: {src.shape} vs {p.data.shape}")
            p.data = src.copy()

    def count(self) -> int:
        return sum(p.data.size for p in self._params.values())


@dataclass
class AdamState:
    """Adam moments and step counter; defaults follow the flow training recipe."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """One bias-corrected Adam update over all parameters; clears gradients."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        if p.grad is None:
            raise StateError(f"adam_step: parameter {name} has no gradient")
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.zero_grads()


def time_embedding(t: float, dim: int, max_freq: float = 16.0) -> np.ndarray:
    """Sinusoidal embedding of a scalar time over log-spaced frequencies.

    dim must be even; the first half holds sines, the second cosines, with
    frequencies geometrically spaced from 1 to ``max_freq``. Times live in
    [0, 1], so moderate frequency content suffices; higher frequencies also
    degrade the midpoint quadrature of the divergence diagnostic.
    """
    if dim % 2 != 0 or dim <= 0:
        raise ConfigurationError(f"time embedding dim must be positive and even, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.array([1.0])
    else:
        freqs = max_freq ** (np.arange(half) / (half - 1))
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


# ---------------------------------------------------------------------------
# Checkpoint format
#
#   magic   8 bytes  b"PIFMCKP1"
#   hlen    uint32 little-endian, header byte length
#   header  UTF-8 JSON: {"format_version": 1, "meta": {...},
#                        "records": [{"name", "shape"}, ...],
#                        "opt": {"lr", "beta1", "beta2", "eps", "step"} | null,
#                        "opt_records": [{"name", "shape", "slot"}, ...]}
#   blobs   raw float64 little-endian arrays, record order, then opt records
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"PIFMCKP1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict,
                    opt_state: AdamState | None = None) -> None:
    names = sorted(arrays)
    records = [{"name": n, "shape": list(np.asarray(arrays[n]).shape)} for n in names]
    header = {"format_version": 1, "meta": meta, "records": records, "opt": None,
              "opt_records": []}
    opt_blobs = []
    if opt_state is not None:
        header["opt"] = {"lr": opt_state.lr, "beta1": opt_state.beta1,
                         "beta2": opt_state.beta2, "eps": opt_state.eps,
                         "step": opt_state.step}
        for slot, table in (("m", opt_state.m), ("v", opt_state.v)):
            for n in sorted(table):
                header["opt_records"].append(
                    {"name": n, "shape": list(table[n].shape), "slot": slot})
                opt_blobs.append(table[n])
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())
        for blob in opt_blobs:
            fh.write(np.ascontiguousarray(blob, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, AdamState | None]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise StateError(f"not a checkpoint file: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise StateError(f"unsupported checkpoint version {header.get('format_version')}")
        arrays = {}
        for rec in header["records"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            arrays[rec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        opt_state = None
        if header["opt"] is not None:
            o = header["opt"]
            opt_state = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"],
                                  eps=o["eps"], step=o["step"])
            for rec in header["opt_records"]:
                shape = tuple(rec["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = fh.read(8 * count)
                arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
                getattr(opt_state, rec["slot"])[rec["name"]] = arr
    return arrays, header["meta"], opt_state
