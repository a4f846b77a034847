"""Named, shape-tagged parameter storage and traversal helpers.

Module parameter objects are dataclasses whose array fields may hold raw
ndarrays (pure forward) or tape `Var`s (differentiable runs).  The walker
here visits every array field with a dotted name derived from the field
path, which gives one mechanism for:

  * lifting a parameter object onto a tape as named leaves,
  * flattening to a {name: ndarray} dict for gradcheck,
  * round-tripping through a `ParamStore` and its on-disk format.

Stored entries are canonicalized to 4D blocks (biases (C,) become
(1, C, 1, 1), complex weight planes (C, H, W) become (1, C, H, W)); the
owning dataclass restores field shapes on load.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tape, Var
from .errors import DimensionError
from .tensor import require, require_finite


def _walk(obj, fn, prefix: str):
    """Rebuild `obj` with fn(name, array) applied to every array field."""
    if isinstance(obj, (np.ndarray, Var)):
        return fn(prefix.rstrip("."), obj)
    if dataclasses.is_dataclass(obj):
        updates = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            updates[f.name] = _walk(value, fn, f"{prefix}{f.name}.")
        return dataclasses.replace(obj, **updates)
    if isinstance(obj, list):
        return [_walk(v, fn, f"{prefix}{i}.") for i, v in enumerate(obj)]
    if isinstance(obj, tuple):
        return tuple(_walk(v, fn, f"{prefix}{i}.") for i, v in enumerate(obj))
    return obj


def lift(params, tape: Tape, prefix: str = ""):
    """Copy of `params` with every ndarray registered as a named tape leaf."""
    def fn(name, arr):
        if isinstance(arr, Var):
            raise ValueError(f"parameter {name!r} is already lifted")
        return tape.leaf(arr, name)
    return _walk(params, fn, prefix)


def named_arrays(params, prefix: str = "") -> dict:
    """Flatten to {dotted-name: ndarray} in field order."""
    out = {}

    def fn(name, arr):
        out[name] = arr.value if isinstance(arr, Var) else arr
        return arr
    _walk(params, fn, prefix)
    return out


def replace_arrays(template, values: dict, prefix: str = ""):
    """Copy of `template` with each array swapped for values[name]."""
    def fn(name, arr):
        if name not in values:
            raise KeyError(f"missing parameter {name!r}")
        new = np.asarray(values[name])
        old = arr.value if isinstance(arr, Var) else arr
        if new.size != old.size:
            raise DimensionError(
                f"parameter {name!r} has {new.size} values, expected "
                f"{old.size}")
        return new.reshape(old.shape).astype(old.dtype)
    return _walk(template, fn, prefix)


def replace_vars(template, leaves: dict, prefix: str = ""):
    """Copy of `template` with each array swapped for the Var leaves[name]."""
    def fn(name, arr):
        if name not in leaves:
            raise KeyError(f"missing parameter {name!r}")
        v = leaves[name]
        old = arr.value if isinstance(arr, Var) else arr
        if v.value.shape != old.shape:
            raise DimensionError(
                f"parameter {name!r} has shape {v.value.shape}, expected "
                f"{old.shape}")
        return v
    return _walk(template, fn, prefix)


def _canon4(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 4:
        return arr
    if arr.ndim == 1:
        return arr.reshape(1, arr.shape[0], 1, 1)
    if arr.ndim == 3:
        return arr.reshape((1,) + arr.shape)
    if arr.ndim == 2:
        return arr.reshape((1, 1) + arr.shape)
    raise DimensionError(f"cannot store {arr.ndim}D parameter")


class ParamStore:
    """Ordered name -> 4D array container matching the on-disk format."""

    def __init__(self):
        self._entries: dict[str, np.ndarray] = {}

    def put(self, name: str, array: np.ndarray) -> None:
        arr = np.asarray(array)
        require(arr.dtype in (np.float32, np.float64),
                f"parameter {name!r} must be f32 or f64, got {arr.dtype}")
        require_finite(arr, f"parameter {name!r}")
        self._entries[name] = _canon4(arr).copy()

    def get(self, name: str) -> np.ndarray:
        if name not in self._entries:
            raise KeyError(f"no parameter named {name!r}")
        return self._entries[name]

    def names(self) -> list:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    @staticmethod
    def from_params(params, prefix: str = "") -> "ParamStore":
        store = ParamStore()
        for name, arr in named_arrays(params, prefix).items():
            store.put(name, arr)
        return store

    def to_params(self, template, prefix: str = ""):
        """Rebuild a parameter object shaped like `template` from the store."""
        values = {name: self.get(name)
                  for name in named_arrays(template, prefix)}
        return replace_arrays(template, values, prefix)
