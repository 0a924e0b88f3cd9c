"""
Tensor and Function Base Classes
Minimal reverse-mode differentiation engine over numpy arrays.

Feature maps use the row-major (N, C, H, W) layout everywhere. Codeword
matrices are (N, D, n) and losses are 0-d tensors.
"""
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """Dense array with an optional gradient slot and a link to the op that produced it"""

    def __init__(self, data: Any, requires_grad: bool = False, creator: Optional["Function"] = None,
                 name: Optional[str] = None):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator
        self.name = name

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype=DEFAULT_DTYPE, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype) -> "Tensor":
        """Copy into a new leaf tensor of the given dtype, keeping requires_grad"""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Accumulate d(self)/d(leaf) into every tensor of the graph that requires grad.

        Args:
            grad: Upstream gradient with the shape of self; defaults to ones
                  (which for a 0-d loss is the usual dL/dL = 1).
        """
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ValueError(f"Seed gradient shape {grad.shape} does not match tensor shape {self.data.shape}")

        order = self._topological_order()
        pending = {id(self): grad}
        for node in order:
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            node.grad = node_grad if node.grad is None else node.grad + node_grad
            if node.creator is None:
                continue
            parent_grads = node.creator.backward(node_grad)
            for parent, parent_grad in zip(node.creator.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    def _topological_order(self) -> List["Tensor"]:
        """Nodes reachable from self, outputs before inputs"""
        visited = set()
        post_order: List[Tensor] = []
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                post_order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        post_order.reverse()
        return post_order

    def __repr__(self):
        label = f" name='{self.name}'" if self.name else ""
        return f"<Tensor shape={self.shape} dtype={self.dtype}{label} requires_grad={self.requires_grad}>"


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps
    dL/d(output) to a tuple of dL/d(input) (None for inputs without gradient).
    """

    def __init__(self, *parents: Tensor):
        self.parents = parents

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        """Run forward on the tensors' data and wrap the result, recording the graph edge if needed"""
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad, creator=func if requires_grad else None)


def as_tensor(value: Any, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(array)


def parameters_to_float64(tensors: Iterable[Tensor]) -> None:
    """Promote leaf tensors in place to float64 (used by gradient checks)"""
    for t in tensors:
        t.data = t.data.astype(np.float64)
        t.grad = None
