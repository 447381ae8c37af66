"""
Computation graph and reverse-mode differentiation
Tensors, op nodes, graph builders, evaluation, backpropagation and a finite-difference oracle
"""

from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.bcgan.errors import GraphError, NonFiniteError, ShapeError
from src.bcgan.kernels import BATCHNORM_EPS, KERNELS, LEAKY_SLOPE, RunningStats


class _Arithmetic:
    """Operator sugar shared by tensors and op nodes"""

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


class Tensor(_Arithmetic):
    """Dense array with shape metadata and an optional gradient buffer"""

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if np.issubdtype(array.dtype, np.floating) else np.float32
        array = np.ascontiguousarray(array, dtype=dtype)
        if array.ndim == 0:
            array = array.reshape(1)
        if array.size == 0:
            raise ShapeError("tensors must have positive extents")
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + grad.astype(self.data.dtype, copy=False)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


class OpNode(_Arithmetic):
    """One operation in the graph; shape is inferred (and validated) at construction"""

    __slots__ = ("kind", "inputs", "attrs", "shape", "dtype")

    def __init__(self, kind: str, inputs: Sequence["Node"], attrs: Optional[Dict[str, Any]] = None):
        if kind not in KERNELS:
            raise GraphError(f"unknown op kind '{kind}'")
        for item in inputs:
            if not isinstance(item, (Tensor, OpNode)):
                raise GraphError(f"{kind}: operand {item!r} is neither a Tensor nor an OpNode")
        self.kind = kind
        self.inputs: Tuple[Node, ...] = tuple(inputs)
        self.attrs: Dict[str, Any] = dict(attrs or {})
        self.shape: Tuple[int, ...] = KERNELS[kind].shape([item.shape for item in self.inputs], self.attrs)
        self.dtype = np.result_type(*[item.dtype for item in self.inputs])

    def __repr__(self) -> str:
        return f"OpNode({self.kind}, shape={self.shape})"


Node = Union[Tensor, OpNode]


def constant(value: Any, like: Optional[Node] = None) -> Tensor:
    """Wrap a number or array as a non-trainable tensor matching another node's dtype"""
    dtype = like.dtype if like is not None else None
    return Tensor(value, requires_grad=False, dtype=dtype)


def _as_node(value: Any, like: Node) -> Node:
    if isinstance(value, (Tensor, OpNode)):
        return value
    return constant(value, like)


# ---------------------------------------------------------------- builders

def conv2d(x: Node, weight: Node, bias: Optional[Node] = None, stride: int = 1, padding: int = 0) -> OpNode:
    inputs = [x, weight] if bias is None else [x, weight, bias]
    return OpNode("conv2d", inputs, {"stride": stride, "padding": padding})


def conv_transpose2d(x: Node, weight: Node, bias: Optional[Node] = None, stride: int = 1, padding: int = 0) -> OpNode:
    inputs = [x, weight] if bias is None else [x, weight, bias]
    return OpNode("conv_transpose2d", inputs, {"stride": stride, "padding": padding})


def batchnorm2d(x: Node, gamma: Node, beta: Node, training: bool, stats: Optional[RunningStats] = None,
                eps: float = BATCHNORM_EPS) -> OpNode:
    if not training and stats is None:
        raise GraphError("batchnorm2d in eval mode needs running statistics")
    return OpNode("batchnorm2d", [x, gamma, beta], {"training": training, "stats": stats, "eps": eps})


def leaky_relu(x: Node, slope: float = LEAKY_SLOPE) -> OpNode:
    return OpNode("leaky_relu", [x], {"slope": slope})


def relu(x: Node) -> OpNode:
    return OpNode("relu", [x])


def sigmoid(x: Node) -> OpNode:
    return OpNode("sigmoid", [x])


def tanh(x: Node) -> OpNode:
    return OpNode("tanh", [x])


def softplus(x: Node) -> OpNode:
    return OpNode("softplus", [x])


def exp(x: Node) -> OpNode:
    return OpNode("exp", [x])


def log(x: Node) -> OpNode:
    return OpNode("log", [x])


def absolute(x: Node) -> OpNode:
    return OpNode("abs", [x])


def square(x: Node) -> OpNode:
    return OpNode("square", [x])


def scalar_mul(x: Node, factor: float) -> OpNode:
    return OpNode("scalar_mul", [x], {"factor": float(factor)})


def concat_channels(*xs: Node) -> OpNode:
    return OpNode("concat_channels", list(xs))


def add(a: Any, b: Any) -> OpNode:
    a_node = _as_node(a, b) if not isinstance(a, (Tensor, OpNode)) else a
    return OpNode("add", [a_node, _as_node(b, a_node)])


def sub(a: Any, b: Any) -> OpNode:
    a_node = _as_node(a, b) if not isinstance(a, (Tensor, OpNode)) else a
    return OpNode("sub", [a_node, _as_node(b, a_node)])


def mul(a: Any, b: Any) -> OpNode:
    a_node = _as_node(a, b) if not isinstance(a, (Tensor, OpNode)) else a
    return OpNode("mul", [a_node, _as_node(b, a_node)])


def mean(x: Node) -> OpNode:
    return OpNode("mean", [x])


def reduce_sum(x: Node) -> OpNode:
    return OpNode("sum", [x])


# ---------------------------------------------------------------- evaluation

class EvaluationCache:
    """Forward values (and saved backward context) of one graph evaluation"""

    def __init__(self):
        self._records: Dict[int, Tuple[OpNode, np.ndarray, Any]] = {}

    def __contains__(self, node: Node) -> bool:
        return isinstance(node, Tensor) or id(node) in self._records

    def store(self, node: OpNode, value: np.ndarray, saved: Any) -> None:
        # node kept in the record so its id cannot be recycled while cached
        self._records[id(node)] = (node, value, saved)

    def value(self, node: Node) -> np.ndarray:
        if isinstance(node, Tensor):
            return node.data
        return self._records[id(node)][1]

    def saved(self, node: OpNode) -> Any:
        return self._records[id(node)][2]


_ACTIVE, _DONE = 1, 2


def topological_order(root: Node) -> List[Node]:
    """
    Order the graph below root so every node follows its inputs

    Raises:
        GraphError: If the graph contains a cycle
    """
    order: List[Node] = []
    state: Dict[int, int] = {}

    def visit(node: Node) -> None:
        mark = state.get(id(node))
        if mark == _DONE:
            return
        if mark == _ACTIVE:
            raise GraphError("computation graph contains a cycle")
        state[id(node)] = _ACTIVE
        if isinstance(node, OpNode):
            for parent in node.inputs:
                visit(parent)
        state[id(node)] = _DONE
        order.append(node)

    visit(root)
    return order


def evaluate(node: Node, cache: Optional[EvaluationCache] = None) -> Tensor:
    """
    Run the forward pass for node, memoizing shared subgraphs

    Args:
        node: Graph output to compute
        cache: Optional cache; reuse it to share work with a later backpropagate()

    Returns:
        The output as a non-trainable Tensor (leaf tensors are returned as is)

    Raises:
        ShapeError: If a kernel's output disagrees with the inferred shape
        NonFiniteError: If any op produces NaN or Inf
    """
    if isinstance(node, Tensor):
        return node
    cache = cache if cache is not None else EvaluationCache()
    for item in topological_order(node):
        if item in cache:
            continue
        values = [cache.value(parent) for parent in item.inputs]
        with np.errstate(all="ignore"):
            out, saved = KERNELS[item.kind].forward(values, item.attrs)
        if tuple(out.shape) != item.shape:
            raise ShapeError(f"{item.kind}: produced {out.shape}, shape rule says {item.shape}")
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(item.kind, f"output shape {item.shape}")
        cache.store(item, out, saved)
    return Tensor(cache.value(node), dtype=node.dtype)


def backpropagate(loss: Node, cache: Optional[EvaluationCache] = None,
                  params: Optional[Iterable[Tensor]] = None) -> List[Tensor]:
    """
    Accumulate dLoss/dT into every reachable tensor with requires_grad

    Args:
        loss: Scalar graph output
        cache: Cache of a previous evaluate(loss); evaluated here when missing
        params: Tensors that must end up with a grad buffer even if unreachable (left at zero)

    Returns:
        The trainable leaves that received a gradient

    Raises:
        GraphError: If loss is not scalar or the graph has a cycle
    """
    if tuple(loss.shape) != (1,):
        raise GraphError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    order = topological_order(loss)
    cache = cache if cache is not None else EvaluationCache()
    evaluate(loss, cache)

    needs_grad = set()
    for item in order:
        if isinstance(item, Tensor):
            if item.requires_grad:
                needs_grad.add(id(item))
        elif any(id(parent) in needs_grad for parent in item.inputs):
            needs_grad.add(id(item))

    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    reached: List[Tensor] = []
    for item in reversed(order):
        if id(item) not in needs_grad:
            continue
        grad = grads.pop(id(item), None)
        if grad is None:
            continue
        if isinstance(item, Tensor):
            item.accumulate_grad(grad)
            reached.append(item)
            continue
        values = [cache.value(parent) for parent in item.inputs]
        input_grads = KERNELS[item.kind].backward(grad, values, cache.value(item), cache.saved(item), item.attrs)
        for parent, parent_grad in zip(item.inputs, input_grads):
            if parent_grad is None or id(parent) not in needs_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    for param in params or []:
        if param.grad is None:
            param.zero_grad()
    return reached


def finite_difference_gradient(f: Callable[[Tensor], Any], x: Tensor, h: float) -> Tensor:
    """
    Central-difference gradient oracle

    Args:
        f: Scalar function of a tensor (may return a float, a Tensor or an OpNode)
        x: Point of evaluation; never modified
        h: Step size

    Returns:
        Tensor of (f(x + h e_i) - f(x - h e_i)) / (2h) per element
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    base = x.data.reshape(-1)
    estimate = np.zeros(base.size, dtype=np.float64)
    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = _scalar_value(f(Tensor(plus.reshape(x.shape), requires_grad=x.requires_grad, dtype=x.dtype)))
        f_minus = _scalar_value(f(Tensor(minus.reshape(x.shape), requires_grad=x.requires_grad, dtype=x.dtype)))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError("finite_difference", f"element {i}")
        estimate[i] = (f_plus - f_minus) / (2.0 * h)
    return Tensor(estimate.reshape(x.shape), dtype=x.dtype)


def _scalar_value(value: Any) -> float:
    if isinstance(value, (Tensor, OpNode)):
        return evaluate(value).item()
    return float(value)
