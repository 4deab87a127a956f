"""Dense reverse-mode differentiation over numpy arrays.

A :class:`Tape` is a Wengert list: every kernel applied to a value that
depends on a marked parameter appends one entry (forward function, adjoint
function, input references, output reference). :func:`backward` walks the
list in reverse and accumulates adjoints.

Values that never touch a tape are computed eagerly and returned as plain
:class:`Var` objects, so every kernel is also usable as an ordinary numpy
function (read ``.value``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class Var:
    """A node in the computation: a value plus (optionally) its tape."""

    __slots__ = ("value", "tape", "requires_grad", "name")

    def __init__(self, value, tape: Tape | None = None, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value)
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Entry:
    out: Var
    inputs: tuple[Var, ...]
    forward: Callable[..., np.ndarray]
    adjoint: Callable[..., tuple]


@dataclass
class Tape:
    """Ordered record of kernel applications on one thread."""

    entries: list[_Entry] = field(default_factory=list)
    params: dict[str, Var] = field(default_factory=dict)
    dtype: type = np.float64

    def param(self, value, name: str) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already marked on this tape")
        v = Var(np.array(value, dtype=self.dtype), tape=self, requires_grad=True, name=name)
        self.params[name] = v
        return v

    def const(self, value) -> Var:
        return Var(np.asarray(value, dtype=self.dtype), tape=self)

    def __len__(self):
        return len(self.entries)

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded kernel from the current leaf values.

        Outputs are overwritten in place, so after perturbing a parameter's
        ``value`` the recorded loss reflects the new parameters.
        """
        outs = []
        for e in self.entries:
            e.out.value = e.forward(*(v.value for v in e.inputs))
            outs.append(e.out.value)
        return outs


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _apply(forward, adjoint, *args) -> Var:
    inputs = tuple(a if isinstance(a, Var) else Var(a) for a in args)
    tape = None
    grad = False
    for v in inputs:
        if v.tape is not None:
            if tape is None:
                tape = v.tape
            elif v.tape is not tape:
                raise ValueError("kernel inputs live on different tapes")
        grad = grad or v.requires_grad
    out = Var(forward(*[v.value for v in inputs]), tape=tape)
    if tape is not None and grad:
        out.requires_grad = True
        tape.entries.append(_Entry(out, inputs, forward, adjoint))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``loss`` with respect to every parameter on ``tape``.

    Parameters that do not influence ``loss`` receive zero arrays.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if loss.tape is not None and loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for e in reversed(tape.entries):
        g = adj.pop(id(e.out), None)
        if g is None:
            continue
        grads = e.adjoint(g, e.out.value, *(v.value for v in e.inputs))
        for v, gv in zip(e.inputs, grads):
            if gv is None or not v.requires_grad:
                continue
            key = id(v)
            if key in adj:
                adj[key] = adj[key] + gv
            else:
                adj[key] = gv
    out = {}
    for name, p in tape.params.items():
        g = adj.get(id(p))
        out[name] = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=p.value.dtype).reshape(p.value.shape)
    return out


# -- kernels ---------------------------------------------------------------


def matmul(a, b) -> Var:
    return _apply(np.matmul, lambda g, out, x, y: (g @ y.T, x.T @ g), a, b)


def add(a, b) -> Var:
    return _apply(np.add, lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)), a, b)


def sub(a, b) -> Var:
    return _apply(np.subtract, lambda g, out, x, y: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)), a, b)


def mul(a, b) -> Var:
    return _apply(np.multiply, lambda g, out, x, y: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), a, b)


def scale(a, c: float) -> Var:
    return _apply(lambda x: x * c, lambda g, out, x: (g * c,), a)


def add_const(a, c: float) -> Var:
    return _apply(lambda x: x + c, lambda g, out, x: (g,), a)


def total(a) -> Var:
    """Sum of all entries (a scalar)."""
    return _apply(lambda x: np.sum(x), lambda g, out, x: (np.full_like(x, g),), a)


def row_sum(a) -> Var:
    return _apply(lambda x: x.sum(axis=1), lambda g, out, x: (np.repeat(g[:, None], x.shape[1], axis=1),), a)


def mean_rows(a) -> Var:
    """Column-wise mean over rows: (n, d) -> (d,)."""
    return _apply(lambda x: x.mean(axis=0), lambda g, out, x: (np.broadcast_to(g / x.shape[0], x.shape).copy(),), a)


def transpose(a) -> Var:
    return _apply(lambda x: x.T.copy(), lambda g, out, x: (g.T,), a)


def concat_cols(a, b) -> Var:
    def fwd(x, y):
        return np.concatenate([x, y], axis=-1)

    def adj(g, out, x, y):
        k = x.shape[-1]
        return g[..., :k], g[..., k:]

    return _apply(fwd, adj, a, b)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Var:
    return _apply(_sigmoid, lambda g, out, x: (g * out * (1.0 - out),), a)


def relu(a) -> Var:
    return _apply(lambda x: np.maximum(x, 0.0), lambda g, out, x: (g * (x > 0),), a)


def softplus(a) -> Var:
    return _apply(lambda x: np.logaddexp(0.0, x), lambda g, out, x: (g * _sigmoid(x),), a)


def sqrt(a) -> Var:
    return _apply(np.sqrt, lambda g, out, x: (g * 0.5 / out,), a)


def log(a, floor: float = LOG_FLOOR) -> Var:
    """Natural log with inputs clamped at ``floor``; zero gradient below it."""
    return _apply(
        lambda x: np.log(np.maximum(x, floor)),
        lambda g, out, x: (np.where(x > floor, g / np.maximum(x, floor), 0.0),),
        a,
    )


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def row_softmax(a) -> Var:
    def adj(g, out, x):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _apply(_softmax, adj, a)


def gather_absdiff(h, edges: np.ndarray) -> Var:
    """|h[src] - h[dst]| per edge: (n, d) -> (E, d)."""
    src, dst = edges[:, 0], edges[:, 1]

    def fwd(x):
        return np.abs(x[src] - x[dst])

    def adj(g, out, x):
        s = g * np.sign(x[src] - x[dst])
        gx = np.zeros_like(x)
        np.add.at(gx, src, s)
        np.add.at(gx, dst, -s)
        return (gx,)

    return _apply(fwd, adj, h)


def scatter_dense(w, edges: np.ndarray, n: int) -> Var:
    """Place per-edge weights into an (n, n) matrix, zeros elsewhere."""
    src, dst = edges[:, 0], edges[:, 1]

    def fwd(x):
        out = np.zeros((n, n), dtype=x.dtype)
        out[src, dst] = x
        return out

    return _apply(fwd, lambda g, out, x: (g[src, dst],), w)


def gcn_normalize(a) -> Var:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""

    def fwd(x):
        m = x + np.eye(x.shape[0], dtype=x.dtype)
        r = 1.0 / np.sqrt(m.sum(axis=1))
        return r[:, None] * m * r[None, :]

    def adj(g, out, x):
        m = x + np.eye(x.shape[0], dtype=x.dtype)
        s = m.sum(axis=1)
        r = 1.0 / np.sqrt(s)
        gm = g * r[:, None] * r[None, :]
        gr = (g * m * r[None, :]).sum(axis=1) + (g * m * r[:, None]).sum(axis=0)
        gs = gr * (-0.5) * r / s
        return (gm + gs[:, None],)

    return _apply(fwd, adj, a)


# -- gradient checking -----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float
    h: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def __str__(self):
        lines = [f"{k}: {v:.3e}" for k, v in sorted(self.max_rel_error.items())]
        return f"gradcheck {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g}, h {self.h:g})\n  " + "\n  ".join(lines)


def finite_difference_check(
    forward_fn: Callable[[Tape, dict[str, Var]], Var],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-6,
    names: Sequence[str] | None = None,
    replay: bool = False,
) -> GradCheckReport:
    """Compare tape gradients with central differences, entry by entry.

    ``forward_fn(tape, param_vars)`` must build the scalar loss on ``tape``
    from the marked parameters. By default it is called afresh for every
    perturbed evaluation, so any sampling noise has to come from a fixed
    seed. With ``replay=True`` the function is called once and perturbed
    losses come from replaying the recorded kernels; this is about three
    times faster but only valid when the computation has no Python-level
    branching on parameter values.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        tape = Tape()
        pv = {k: tape.param(v, k) for k, v in values.items()}
        return tape, forward_fn(tape, pv)

    tape, loss = evaluate(base)
    grads = backward(tape, loss)

    def perturbed():
        if not replay:
            return float(evaluate(base)[1].value)
        tape.replay()
        return float(loss.value)

    report = {}
    for name in names or sorted(base):
        # in replay mode the tape's own leaf is perturbed in place
        p = tape.params[name].value if replay else base[name]
        worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            fp = perturbed()
            p[idx] = orig - h
            fm = perturbed()
            p[idx] = orig
            num = (fp - fm) / (2 * h)
            ana = float(grads[name][idx])
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
            worst = max(worst, err)
        report[name] = worst
    if replay:
        tape.replay()
    return GradCheckReport(report, tol, h)
