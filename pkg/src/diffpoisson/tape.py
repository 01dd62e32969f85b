"""A small eager reverse-mode AD tape.

Every operation evaluates immediately and records a pullback: a function
mapping the cotangent of its output to cotangents of its parents.
``Tape.backward`` sweeps the record in reverse, summing cotangents.

New primitives are added with :func:`primitive`; :func:`pde_solve_node`
registers the Poisson solve with the adjoint solve as its pullback.

>>> tape = Tape()
>>> x = tape.input([1.0, 2.0])
>>> y = dot(x, x)
>>> tape.backward(y)[x.id]
array([2., 4.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import diff_solve
from .diff_solve import ParameterKind, PdeParameter
from .fem import PoissonProblem


class Node:
    __slots__ = ("tape", "id", "value", "parents", "pullback")

    def __init__(self, tape, id, value, parents, pullback):
        self.tape = tape
        self.id = id
        self.value = value
        self.parents = parents
        self.pullback = pullback

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[int] = []

    def input(self, value) -> Node:
        node = self._push(_as_value(value), (), None)
        self.inputs.append(node.id)
        return node

    def _push(self, value, parents, pullback) -> Node:
        if not np.all(np.isfinite(value)):
            raise FloatingPointError("non-finite value recorded on tape")
        node = Node(self, len(self.nodes), value, tuple(parents), pullback)
        self.nodes.append(node)
        return node

    def backward(self, output: Node, seed=1.0) -> dict[int, np.ndarray]:
        """Gradients of scalar ``output`` with respect to every input node."""
        if output.tape is not self:
            raise ValueError("output node belongs to another tape")
        if output.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.value.shape}")
        cotangents: dict[int, np.ndarray] = {
            output.id: np.full(output.value.shape, float(seed))
        }
        for node in reversed(self.nodes[: output.id + 1]):
            if node.pullback is None or node.id not in cotangents:
                continue
            ct = cotangents.pop(node.id)
            parent_cts = node.pullback(ct)
            for parent, pct in zip(node.parents, parent_cts):
                if parent is None or pct is None:
                    continue
                if parent.id in cotangents:
                    cotangents[parent.id] = cotangents[parent.id] + pct
                else:
                    cotangents[parent.id] = np.asarray(pct, dtype=float)
        return {
            i: cotangents.get(i, np.zeros_like(self.nodes[i].value)) for i in self.inputs
        }


def _as_value(x):
    return np.array(x, dtype=float)


def _tape_of(*args):
    tapes = {a.tape for a in args if isinstance(a, Node)}
    if len(tapes) != 1:
        raise ValueError("operands must come from exactly one tape")
    return tapes.pop()


def _unwrap(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=float)


def primitive(
    parents: Sequence,
    value,
    pullbacks: Sequence[Callable | None],
) -> Node:
    """Record a new operation.

    ``parents`` may mix nodes and constants; ``pullbacks[i]`` maps the output
    cotangent to the cotangent of ``parents[i]`` and is ignored for
    constants.
    """
    tape = _tape_of(*parents)
    value = _as_value(value)
    node_parents = tuple(p if isinstance(p, Node) else None for p in parents)

    def pullback(ct):
        return tuple(
            pb(ct) if (p is not None and pb is not None) else None
            for p, pb in zip(node_parents, pullbacks)
        )

    return tape._push(value, node_parents, pullback)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Node:
    va, vb = _unwrap(a), _unwrap(b)
    if vb.ndim == 0 or va.ndim == 0:
        # scalar broadcast only
        def reduce_a(ct):
            return ct.sum().reshape(va.shape) if va.ndim == 0 else ct

        def reduce_b(ct):
            return ct.sum().reshape(vb.shape) if vb.ndim == 0 else ct

        return primitive((a, b), va + vb, (reduce_a, reduce_b))
    _check_same_shape(va, vb, "add")
    return primitive((a, b), va + vb, (lambda ct: ct, lambda ct: ct))


def sub(a, b) -> Node:
    va, vb = _unwrap(a), _unwrap(b)
    _check_same_shape(va, vb, "sub")
    return primitive((a, b), va - vb, (lambda ct: ct, lambda ct: -ct))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return primitive((a,), c * _unwrap(a), (lambda ct: c * ct,))


def dot(a, b) -> Node:
    va, vb = _unwrap(a), _unwrap(b)
    _check_same_shape(va, vb, "dot")
    return primitive(
        (a, b), np.vdot(va, vb), (lambda ct: ct * vb, lambda ct: ct * va)
    )


def tanh(a: Node) -> Node:
    y = np.tanh(_unwrap(a))
    return primitive((a,), y, (lambda ct: ct * (1.0 - y * y),))


tanh_elementwise = tanh


def affine(W, b, x) -> Node:
    """``x @ W.T + b`` for a single input vector or a batch of rows."""
    vW, vb, vx = _unwrap(W), _unwrap(b), _unwrap(x)
    if vW.ndim != 2 or vb.shape != (vW.shape[0],) or vx.shape[-1] != vW.shape[1]:
        raise ValueError(f"affine: incompatible shapes W{vW.shape}, b{vb.shape}, x{vx.shape}")
    y = vx @ vW.T + vb

    def pb_W(ct):
        return np.outer(ct, vx) if vx.ndim == 1 else ct.T @ vx

    def pb_b(ct):
        return ct if ct.ndim == 1 else ct.sum(axis=0)

    return primitive((W, b, x), y, (pb_W, pb_b, lambda ct: ct @ vW))


def take(a: Node, index) -> Node:
    """``a[index]`` for a basic slice or integer index."""
    va = _unwrap(a)

    def pb(ct):
        out = np.zeros_like(va)
        out[index] = ct
        return out

    return primitive((a,), va[index], (pb,))


def reshape(a: Node, shape) -> Node:
    va = _unwrap(a)
    return primitive((a,), va.reshape(shape), (lambda ct: ct.reshape(va.shape),))


def scalar_functional(a: Node, value_fn, grad_fn) -> Node:
    """Wrap a scalar function of one node given its value and gradient."""
    va = _unwrap(a)
    return primitive((a,), value_fn(va), (lambda ct: float(ct) * grad_fn(va),))


def pde_solve_node(
    param: Node,
    kind,
    problem: PoissonProblem,
    context,
    tol=1e-10,
) -> Node:
    """Record ``u = solve(param)``; the pullback performs one adjoint solve.

    ``context`` is the field held fixed: ``kappa`` when ``kind`` is the
    source, ``f`` when ``kind`` is the conductivity.
    """
    kind = ParameterKind(kind)
    pde_param = PdeParameter(kind, _unwrap(param).copy(), np.asarray(context, dtype=float))
    rec = diff_solve.forward(problem, pde_param, tol=tol)
    return primitive((param,), rec.u, (lambda ct: diff_solve.vjp(rec, ct),))
