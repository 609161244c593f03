"""
Dense numpy-backed tensors with reverse-mode automatic differentiation

Every differentiable op builds its output with ``Tensor.from_op``, passing
the parent tensors and a gradient rule ``grad_out -> tuple of parent grads``.
``Tape`` orders the graph below a scalar output and runs the rules in reverse.
"""

import contextlib
import logging
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32


class ShapeError(ValueError):
    """Operands have incompatible shapes"""


def set_default_dtype(dtype) -> None:
    """Precision of newly created tensors: float32 (training) or float64 (gradient checks)"""
    global _default_dtype
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {dtype}")
        dtype = _DTYPES[dtype]
    if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = np.dtype(dtype).type


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype"""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


GradRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    Row-major real array plus autodiff bookkeeping

    Leaves created by the user hold ``requires_grad``; op outputs remember
    their parents only when some parent requires a gradient.
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=_default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._grad_rule: Optional[GradRule] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], grad_rule: GradRule) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=_default_dtype)
        out.grad = None
        out.name = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_rule = grad_rule
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_rule = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._grad_rule is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad})"

    # operators delegate to tensorgrad.functional
    def __add__(self, other):
        from tensorgrad import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from tensorgrad import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from tensorgrad import functional as F
        return F.add(F.neg(self), other)

    def __mul__(self, other):
        from tensorgrad import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from tensorgrad import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from tensorgrad import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from tensorgrad import functional as F
        return F.take(self, index)

    def sum(self):
        from tensorgrad import functional as F
        return F.sum_all(self)

    def mean(self):
        from tensorgrad import functional as F
        return F.mean_all(self)

    def reshape(self, *shape):
        from tensorgrad import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor"""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


class Tape:
    """
    Topologically ordered record of the graph below one output

    Built with an iterative depth-first search, so graphs deeper than the
    interpreter's recursion limit (long unrolls) are fine.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.order: List[Tensor] = self._topological_order(output)

    @staticmethod
    def _topological_order(root: Tensor) -> List[Tensor]:
        if not root.requires_grad:
            return []
        order: List[Tensor] = []
        # 1 = on the DFS stack, 2 = finished
        marks: Dict[int, int] = {id(root): 1}
        stack: List[Tuple[Tensor, Iterator[Tensor]]] = [(root, iter(root._parents))]
        while stack:
            node, parents = stack[-1]
            parent = next(parents, None)
            if parent is None:
                marks[id(node)] = 2
                order.append(node)
                stack.pop()
                continue
            if not parent.requires_grad:
                continue
            mark = marks.get(id(parent))
            assert mark != 1, "cycle in autodiff graph"
            if mark is None:
                marks[id(parent)] = 1
                stack.append((parent, iter(parent._parents)))
        return order

    def __len__(self) -> int:
        return len(self.order)

    def backward(self, grad_output: Optional[np.ndarray] = None) -> None:
        """Run every gradient rule once, in reverse topological order; leaves accumulate .grad"""
        if not self.order:
            return
        if grad_output is None:
            grad_output = np.ones_like(self.output.data)
        grads: Dict[int, np.ndarray] = {id(self.output): np.asarray(grad_output, dtype=self.output.data.dtype)}

        for node in reversed(self.order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node._grad_rule(grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.data.shape:
                    raise ShapeError(f"gradient shape {parent_grad.shape} vs tensor shape {parent.data.shape}")
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def backward(output: Tensor) -> Tape:
    """Backpropagate from a scalar output into every requires_grad leaf"""
    if output.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    tape = Tape(output)
    tape.backward()
    return tape


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
