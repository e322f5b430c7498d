"""Parameter containers: a minimal module tree and the 1x1 embedding block."""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .errors import FormatError
from .tensor import BatchNormState, Tensor


def he_weight(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return Tensor(w, requires_grad=True, dtype=dtype)


class Module:
    """Walks attributes to find parameters and batch-norm states by name."""

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, (Tensor, BatchNormState, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Tensor, BatchNormState, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out[name] = val
            elif isinstance(val, BatchNormState):
                out[f"{name}.gamma"] = val.gamma
                out[f"{name}.beta"] = val.beta
            else:
                out.update(val.named_parameters(f"{name}."))
        return out

    def batch_norms(self) -> list[BatchNormState]:
        out = []
        for _, val in self._children():
            if isinstance(val, BatchNormState):
                out.append(val)
            elif isinstance(val, Module):
                out.extend(val.batch_norms())
        return out

    def train(self, mode: bool = True) -> "Module":
        for bn in self.batch_norms():
            bn.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                out[name] = val.data
            elif isinstance(val, BatchNormState):
                out[f"{name}.gamma"] = val.gamma.data
                out[f"{name}.beta"] = val.beta.data
                out[f"{name}.running_mean"] = val.running_mean
                out[f"{name}.running_var"] = val.running_var
            else:
                out.update(val.state_dict(f"{name}."))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        if missing:
            raise FormatError(f"checkpoint missing tensors: {', '.join(missing[:5])}")
        self._assign(state, "")

    def _assign(self, state, prefix):
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                _copy_into(val.data, state[name], name)
            elif isinstance(val, BatchNormState):
                _copy_into(val.gamma.data, state[f"{name}.gamma"], name)
                _copy_into(val.beta.data, state[f"{name}.beta"], name)
                val.running_mean = state[f"{name}.running_mean"].astype(val.running_mean.dtype)
                val.running_var = state[f"{name}.running_var"].astype(val.running_var.dtype)
            else:
                val._assign(state, f"{name}.")


def _copy_into(dst: np.ndarray, src: np.ndarray, name: str) -> None:
    if dst.shape != src.shape:
        raise FormatError(f"checkpoint tensor {name}: shape {src.shape}, expected {dst.shape}")
    dst[...] = src


class Embedding(Module):
    """1x1 convolution (per-node linear map) followed by BN and ReLU."""

    def __init__(self, c_in: int, c_out: int, rng, dtype=tt.DEFAULT_DTYPE, use_bn: bool = True):
        self.weight = he_weight(rng, (c_out, c_in), c_in, dtype)
        self.bn = BatchNormState.create(c_out, dtype) if use_bn else None

    def __call__(self, x: Tensor) -> Tensor:
        y = tt.linear_map(x, self.weight)
        if self.bn is not None:
            y = tt.batch_norm(y, self.bn)
        return tt.relu(y)
