"""Module system: parameter containers, initialisers, and state handling."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, UsageError
from .tensor import Tensor

__all__ = ["Parameter", "Module", "ModuleList", "he_normal", "trunc_normal"]


class Parameter(Tensor):
    """A tensor registered as trainable state of a module."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(np.array(data), requires_grad=requires_grad)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """He-style normal init: zero-mean, variance ``2 / fan_in``."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


def trunc_normal(
    rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32
) -> np.ndarray:
    """Normal draw truncated to two standard deviations by resampling."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


class Module:
    """Base class for layers and models.

    Parameters and submodules register themselves through attribute
    assignment; traversal follows attribute insertion order, which makes
    parameter naming deterministic for a fixed architecture.
    """

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def forward(self, *args, **kwargs):
        raise UsageError(f"{type(self).__name__} does not implement forward()")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        """Attach non-trainable persistent state (e.g. running statistics)."""
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _children(self):
        for name, value in self.__dict__.items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value

    def named_parameters(self, prefix: str = ""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(f"{full}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, value in self._buffers.items():
            yield f"{prefix}{name}", value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def to_dtype(self, dtype):
        """Cast all parameters and buffers in place (e.g. for float64 checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for name, buf in m._buffers.items():
                cast = buf.astype(dtype)
                m._buffers[name] = cast
                object.__setattr__(m, name, cast)
        return self

    def state_arrays(self):
        """``(parameters, buffers)`` as name-keyed array dicts."""
        params = {name: p.data for name, p in self.named_parameters()}
        buffers = {name: b for name, b in self.named_buffers()}
        return params, buffers

    def load_state_arrays(self, params: dict, buffers: dict) -> None:
        own_params = dict(self.named_parameters())
        if set(own_params) != set(params):
            missing = sorted(set(own_params) - set(params))
            extra = sorted(set(params) - set(own_params))
            raise UsageError(f"parameter name mismatch: missing {missing}, unexpected {extra}")
        for name, value in params.items():
            p = own_params[name]
            if p.data.shape != value.shape:
                raise DimensionError(
                    f"parameter '{name}' has shape {p.data.shape}, checkpoint holds {value.shape}"
                )
            p.data = value.astype(p.data.dtype)
        buf_owners = self._buffer_owners()
        if set(buf_owners) != set(buffers):
            missing = sorted(set(buf_owners) - set(buffers))
            extra = sorted(set(buffers) - set(buf_owners))
            raise UsageError(f"buffer name mismatch: missing {missing}, unexpected {extra}")
        for name, value in buffers.items():
            owner, local = buf_owners[name]
            if owner._buffers[local].shape != value.shape:
                raise DimensionError(f"buffer '{name}' shape mismatch")
            cast = value.astype(owner._buffers[local].dtype)
            owner._buffers[local] = cast
            object.__setattr__(owner, local, cast)

    def _buffer_owners(self, prefix: str = ""):
        owners = {}
        for name in self._buffers:
            owners[f"{prefix}{name}"] = (self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                owners.update(value._buffer_owners(f"{prefix}{name}."))
        return owners


class ModuleList(Module):
    """A list of submodules addressed by index in parameter names."""

    def __init__(self, items=()):
        super().__init__()
        self._items: list[Module] = list(items)

    def append(self, module: Module) -> None:
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]

    def _children(self):
        for i, item in enumerate(self._items):
            yield str(i), item
