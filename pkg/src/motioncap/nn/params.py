"""Named parameter collections shared by the three networks."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParameterSet:
    """Map from unique string path to a trainable Tensor.

    Paths listed in ``frozen`` are skipped by the optimizer but still take
    part in forward passes and gradient computation.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()

    def add(self, path: str, value: np.ndarray) -> Tensor:
        if path in self._params:
            raise ValueError(f"duplicate parameter path: {path}")
        t = Tensor(value, requires_grad=True)
        self._params[path] = t
        return t

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __len__(self) -> int:
        return len(self._params)

    def paths(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for path in self.paths():
            yield path, self._params[path]

    def tensors(self):
        return [self._params[p] for p in self.paths()]

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def freeze(self, *paths: str) -> None:
        for p in paths:
            if p not in self._params:
                raise KeyError(f"cannot freeze unknown path: {p}")
            self.frozen.add(p)

    def freeze_all(self) -> None:
        self.frozen.update(self._params)

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def clear_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy_values(self) -> dict[str, np.ndarray]:
        return {p: t.data.copy() for p, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for path, arr in values.items():
            t = self._params[path]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {path}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    @classmethod
    def merged(cls, groups: dict[str, "ParameterSet"]) -> "ParameterSet":
        """A combined view over several sets; tensors are shared, not copied."""
        out = cls()
        for name, ps in groups.items():
            for path, t in ps._params.items():
                full = f"{name}.{path}"
                if full in out._params:
                    raise ValueError(f"duplicate parameter path: {full}")
                out._params[full] = t
            out.frozen.update(f"{name}.{p}" for p in ps.frozen)
        return out
