"""Dense tensors with a reverse-mode autodiff tape.

Kernels are numpy; the tape is our own. Every op records a node on the
currently active tape when any input requires grad. Tapes are rebuilt per
forward pass, which keeps freeze/unfreeze training trivial: a parameter
that is excluded from the optimizer simply never moves.

Only two broadcast forms exist: exact-shape and scalar. Anything else is
rejected so every kernel stays verifiable against a naive oracle.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_TAPE_STACK: list["Tape"] = []


def set_default_dtype(dtype) -> None:
    """Switch the default real width (float32 for training, float64 for
    gradient verification)."""
    global DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    DEFAULT_DTYPE = dtype.type


class Tensor:
    """A dense N-d array of reals plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        keep_native = dtype is None and isinstance(data, np.ndarray) \
            and data.dtype in (np.float32, np.float64)
        if keep_native:
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            raise ValueError(f"unsupported dtype {arr.dtype}; tensors hold float32/float64")
        arr = np.asarray(arr)
        # ascontiguousarray would promote 0-d to shape (1,); keep rank-0 intact
        self.data = arr if arr.ndim == 0 or arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None   # same-shape ndarray once touched by backward
        self.node = None   # op node that produced this tensor, if any

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def is_leaf(self) -> bool:
        return self.node is None

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        """Copy of the value severed from the tape (stop-gradient)."""
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """One recorded op: inputs, output, and a rule mapping the output
    gradient to per-input gradients."""

    __slots__ = ("inputs", "out", "backward_fn", "tag", "tape")

    def __init__(self, inputs, out, backward_fn, tag, tape):
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.tag = tag
        self.tape = tape


class Tape:
    """Ordered op recording; topological by construction (ops append as
    they execute). Use as a context manager around a forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out: Tensor, inputs, backward_fn, tag: str) -> Tensor:
    """Attach a node for `out` to the active tape if any input needs grad.

    `backward_fn(gout) -> tuple of per-input gradients (or None)`, aligned
    with `inputs`. Layer modules use this hook to define fused ops.
    """
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(tuple(inputs), out, backward_fn, tag, tape)
        out.node = node
        tape.nodes.append(node)
    return out


def backward(root: Tensor) -> None:
    """Reverse sweep from a scalar root; leaf grads accumulate across calls.

    Interior gradients are scratch per call, so repeated backward() doubles
    only the leaves, matching the accumulate-until-reset contract.
    """
    if root.shape != ():
        raise ValueError(f"backward root must be a scalar, got shape {root.shape}")
    if root.node is None:
        if root.requires_grad:
            root.accumulate_grad(np.ones((), dtype=root.data.dtype))
        return
    tape = root.node.tape
    interior: dict[int, np.ndarray] = {id(root): np.ones((), dtype=root.data.dtype)}
    for node in reversed(tape.nodes):
        gout = interior.pop(id(node.out), None)
        if gout is None:
            continue
        grads = node.backward_fn(gout)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.data.shape:
                raise RuntimeError(
                    f"backward of {node.tag}: gradient shape {g.shape} != input shape {inp.data.shape}")
            if inp.node is None:
                inp.accumulate_grad(g)
            else:
                buf = interior.get(id(inp))
                if buf is None:
                    interior[id(inp)] = g.copy()
                else:
                    buf += g
    if interior:
        raise RuntimeError("backward found gradients for nodes outside the tape")


# -- shape plumbing ----------------------------------------------------------


def _coerce_pair(a, b, op: str):
    """Apply the scalar-or-exact-shape rule; returns (Tensor a, Tensor b)."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = Tensor(np.full((), a, dtype=DEFAULT_DTYPE))
    if not isinstance(a, Tensor):
        a = Tensor(np.full((), a, dtype=b.data.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.full((), b, dtype=a.data.dtype))
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} "
                         "(only scalar and exact-shape operands supported)")
    return a, b


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # Only the scalar broadcast exists, so the reduction is a full sum.
    if shape == () and g.shape != ():
        return g.sum()
    return g.reshape(shape) if g.shape != shape else g


# -- elementwise ops ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b, "add")
    out = Tensor(a.data + b.data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return record(out, (a, b), bw, "mul")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient routes to the first operand."""
    a, b = _coerce_pair(a, b, "max")
    out = Tensor(np.maximum(a.data, b.data))
    take_a = a.data >= b.data

    def bw(g):
        return (_unbroadcast(g * take_a, a.shape),
                _unbroadcast(g * ~take_a, b.shape))

    return record(out, (a, b), bw, "max")


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    y = out.data

    def bw(g):
        return (g * y,)

    return record(out, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    x = a.data

    def bw(g):
        return (g / x,)

    return record(out, (a,), bw, "log")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-free on both tails
    out = Tensor(0.5 * (1.0 + np.tanh(0.5 * a.data)))
    y = out.data

    def bw(g):
        return (g * y * (1.0 - y),)

    return record(out, (a,), bw, "sigmoid")


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return record(out, (a,), bw, "relu")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "max": maximum,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "relu": relu,
}


def elementwise(tag: str, a, b=None) -> Tensor:
    """Dispatch by op tag; unary tags reject a second operand."""
    try:
        fn = _ELEMENTWISE[tag]
    except KeyError:
        raise ValueError(f"unknown elementwise op tag {tag!r}") from None
    if tag in ("add", "sub", "mul", "max"):
        if b is None:
            raise ValueError(f"{tag} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{tag} is unary")
    return fn(a)


# -- reductions and structure ops ---------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return record(out, (a, b), bw, "matmul")


def tsum(a: Tensor) -> Tensor:
    """Full reduction to a shape-() scalar."""
    out = Tensor(a.data.sum())
    shape, dtype = a.shape, a.data.dtype

    def bw(g):
        return (np.full(shape, g, dtype=dtype),)

    return record(out, (a,), bw, "sum")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(out, tuple(tensors), bw, "concat")


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return record(out, (a,), bw, "reshape")
