"""Dense float64 linear algebra with a tape for reverse-mode gradients.

Every reduction here is order-canonical: dot products, softmax denominators
and scalar reductions sum their terms in ascending value order. Results are
therefore bit-identical under permutations of the reduction axis and under
row/column permutations of the surrounding computation, which the rest of
the package relies on for exact reproducibility checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Upper bound on the temporarily materialized (rows, k, m) product block.
_CHUNK_ELEMS = 1 << 18

_EPS = 1e-12


class NumericsError(Exception):
    """Numerical failure: non-finite value produced, or training divergence."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array, rejecting non-finite data."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise NumericsError(f"{name}: non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with order-canonical summation.

    Each output entry sums its k partial products in ascending value order,
    so the result does not depend on operand memory layout or on any
    permutation of the reduction axis.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul: operands must be 2-D")
    n, k = a.shape
    kb, m = b.shape
    if k != kb:
        raise ValueError(f"matmul: inner dimensions differ ({k} vs {kb})")
    out = np.zeros((n, m), dtype=np.float64)
    if k == 0 or n == 0 or m == 0:
        return out
    rows = max(1, _CHUNK_ELEMS // max(1, k * m))
    # Overflow here surfaces as a NumericsError at the op boundary; the
    # default RuntimeWarning would only duplicate that signal on stderr.
    with np.errstate(over="ignore", invalid="ignore"):
        for i0 in range(0, n, rows):
            # Contiguity matters: the bit pattern of .sum over a strided block
            # differs from the same sum over its C-contiguous copy.
            blk = np.ascontiguousarray(a[i0:i0 + rows, :, None] * b[None, :, :])
            blk.sort(axis=1)
            out[i0:i0 + rows] = blk.sum(axis=1)
    return out


def _sorted_row_sum(x: np.ndarray) -> np.ndarray:
    s = np.sort(np.ascontiguousarray(x), axis=1)
    return s.sum(axis=1, keepdims=True)


def _sorted_total(x: np.ndarray) -> float:
    return float(np.sort(np.ascontiguousarray(x).ravel()).sum())


def sigmoid(x) -> np.ndarray:
    """Logistic function, evaluated in the symmetric form for negative inputs."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x, mask=None) -> np.ndarray:
    """Row softmax with max-subtraction; masked entries are exactly 0.

    Raises ValueError on a fully-masked row. The denominator is summed in
    sorted order, keeping the output canonical under column permutation.
    """
    x = as_matrix(x, "softmax input")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError("softmax_rows: mask shape mismatch")
    alive = mask.any(axis=1)
    if not alive.all():
        bad = int(np.flatnonzero(~alive)[0])
        raise ValueError(f"softmax_rows: fully masked row {bad}")
    shifted = np.where(mask, x, -np.inf)
    mx = shifted.max(axis=1, keepdims=True)
    z = np.where(mask, x - mx, 0.0)
    ex = np.where(mask, np.exp(z), 0.0)
    return ex / _sorted_row_sum(ex)


class _Node:
    __slots__ = ("value", "parents", "backward_fn", "needs_grad")

    def __init__(self, value, parents, backward_fn, needs_grad):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.needs_grad = needs_grad


@dataclass(frozen=True)
class Var:
    """Handle to a value recorded on a Tape."""

    tape: "Tape"
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape._nodes[self.index].value

    @property
    def shape(self):
        return self.tape._nodes[self.index].value.shape


class Gradients:
    """Read-only map from parameter Var to its gradient array."""

    def __init__(self, tape, table):
        self._tape = tape
        self._table = table

    def __getitem__(self, var: Var) -> np.ndarray:
        if var.tape is not self._tape:
            raise ValueError("gradient lookup for a Var from another tape")
        if var.index not in self._table:
            raise KeyError("not a registered parameter")
        return self._table[var.index]


class Tape:
    """Ordered record of primitive operations supporting one backward pass.

    Values are immutable once recorded; insertion order is the topological
    order. Construction and backward are single-threaded.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: list[int] = []

    def __len__(self):
        return len(self._nodes)

    def _value(self, v: Var) -> np.ndarray:
        if v.tape is not self:
            raise ValueError("Var belongs to a different tape")
        return self._nodes[v.index].value

    def _record(self, value, parents=(), backward_fn=None) -> Var:
        value = np.ascontiguousarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ValueError("tape values must be 2-D")
        if value.size and not np.isfinite(value).all():
            raise NumericsError("non-finite result at operation boundary")
        needs = any(self._nodes[p].needs_grad for p in parents)
        self._nodes.append(_Node(value, tuple(parents), backward_fn, needs))
        return Var(self, len(self._nodes) - 1)

    # ---- leaves ----

    def constant(self, value, name: str = "constant") -> Var:
        return self._record(as_matrix(value, name))

    def param(self, value, name: str = "param") -> Var:
        v = self._record(as_matrix(value, name))
        self._nodes[v.index].needs_grad = True
        self._params.append(v.index)
        return v

    # ---- primitives ----

    def matmul(self, a: Var, b: Var) -> Var:
        av, bv = self._value(a), self._value(b)
        out = matmul(av, bv)

        def backward_fn(g):
            return matmul(g, bv.T), matmul(av.T, g)

        return self._record(out, (a.index, b.index), backward_fn)

    def add(self, a: Var, b: Var) -> Var:
        av, bv = self._value(a), self._value(b)
        if av.shape != bv.shape:
            raise ValueError(f"add: shape mismatch {av.shape} vs {bv.shape}")

        def backward_fn(g):
            return g, g

        return self._record(av + bv, (a.index, b.index), backward_fn)

    def mul(self, a: Var, b: Var) -> Var:
        av, bv = self._value(a), self._value(b)
        if av.shape != bv.shape:
            raise ValueError(f"mul: shape mismatch {av.shape} vs {bv.shape}")

        def backward_fn(g):
            return g * bv, g * av

        return self._record(av * bv, (a.index, b.index), backward_fn)

    def scale(self, a: Var, c: float) -> Var:
        av = self._value(a)
        c = float(c)

        def backward_fn(g):
            return (g * c,)

        return self._record(av * c, (a.index,), backward_fn)

    def add_bias(self, a: Var, bias: Var) -> Var:
        av, bv = self._value(a), self._value(bias)
        if bv.shape != (1, av.shape[1]):
            raise ValueError(f"add_bias: bias shape {bv.shape} does not fit {av.shape}")

        def backward_fn(g):
            return g, g.sum(axis=0, keepdims=True)

        return self._record(av + bv, (a.index, bias.index), backward_fn)

    def concat_cols(self, a: Var, b: Var) -> Var:
        av, bv = self._value(a), self._value(b)
        if av.shape[0] != bv.shape[0]:
            raise ValueError("concat_cols: row counts differ")
        ka = av.shape[1]

        def backward_fn(g):
            return np.ascontiguousarray(g[:, :ka]), np.ascontiguousarray(g[:, ka:])

        return self._record(np.concatenate([av, bv], axis=1), (a.index, b.index), backward_fn)

    def relu(self, a: Var) -> Var:
        av = self._value(a)
        keep = av > 0

        def backward_fn(g):
            return (g * keep,)

        return self._record(np.maximum(av, 0.0), (a.index,), backward_fn)

    def sigmoid(self, a: Var) -> Var:
        s = sigmoid(self._value(a))

        def backward_fn(g):
            return (g * s * (1.0 - s),)

        return self._record(s, (a.index,), backward_fn)

    def softmax_row(self, a: Var, mask=None) -> Var:
        s = softmax_rows(self._value(a), mask)

        def backward_fn(g):
            inner = (g * s).sum(axis=1, keepdims=True)
            return (s * (g - inner),)

        return self._record(s, (a.index,), backward_fn)

    def select_rows(self, a: Var, idx) -> Var:
        av = self._value(a)
        idx = np.asarray(idx, dtype=np.intp).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= av.shape[0]):
            raise ValueError("select_rows: index out of range")

        def backward_fn(g):
            z = np.zeros_like(av)
            np.add.at(z, idx, g)
            return (z,)

        return self._record(av[idx], (a.index,), backward_fn)

    def scatter_rows(self, a: Var, idx, n_rows: int) -> Var:
        av = self._value(a)
        idx = np.asarray(idx, dtype=np.intp).ravel()
        if idx.size != av.shape[0]:
            raise ValueError("scatter_rows: one index per input row required")
        if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
            raise ValueError("scatter_rows: index out of range")
        out = np.zeros((int(n_rows), av.shape[1]), dtype=np.float64)
        np.add.at(out, idx, av)

        def backward_fn(g):
            return (np.ascontiguousarray(g[idx]),)

        return self._record(out, (a.index,), backward_fn)

    def reshape(self, a: Var, rows: int, cols: int) -> Var:
        av = self._value(a)
        if rows * cols != av.size:
            raise ValueError("reshape: size mismatch")

        def backward_fn(g):
            return (g.reshape(av.shape),)

        return self._record(av.reshape(rows, cols), (a.index,), backward_fn)

    def transpose(self, a: Var) -> Var:
        av = self._value(a)

        def backward_fn(g):
            return (np.ascontiguousarray(g.T),)

        return self._record(av.T, (a.index,), backward_fn)

    def reduce_sum(self, a: Var) -> Var:
        av = self._value(a)

        def backward_fn(g):
            return (np.full_like(av, g[0, 0]),)

        return self._record([[_sorted_total(av)]], (a.index,), backward_fn)

    # ---- fused losses ----

    def bce_mean(self, scores: Var, labels) -> Var:
        """Mean binary cross-entropy of probabilities against 0/1 labels.

        Probabilities are clamped to [1e-12, 1-1e-12] before the logs; the
        gradient is that of the clamped function (zero outside the clamp).
        """
        sv = self._value(scores)
        if sv.shape[1] != 1:
            raise ValueError("bce_mean: scores must be a column")
        y = np.ascontiguousarray(labels, dtype=np.float64).reshape(sv.shape)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("bce_mean: labels must be 0 or 1")
        k = sv.shape[0]
        if k == 0:
            raise ValueError("bce_mean: empty batch")
        p = np.clip(sv, _EPS, 1.0 - _EPS)
        terms = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
        value = [[_sorted_total(terms) / k]]

        def backward_fn(g):
            inside = (sv > _EPS) & (sv < 1.0 - _EPS)
            return ((g[0, 0] / k) * inside * (p - y) / (p * (1.0 - p)),)

        return self._record(value, (scores.index,), backward_fn)

    def cross_entropy_mean(self, logits: Var, labels) -> Var:
        """Mean softmax cross-entropy of logit rows against integer labels."""
        lv = self._value(logits)
        y = np.asarray(labels, dtype=np.intp).ravel()
        k, c = lv.shape
        if y.size != k:
            raise ValueError("cross_entropy_mean: one label per row required")
        if k == 0:
            raise ValueError("cross_entropy_mean: empty batch")
        if y.min() < 0 or y.max() >= c:
            raise ValueError("cross_entropy_mean: label out of range")
        mx = lv.max(axis=1, keepdims=True)
        ex = np.exp(lv - mx)
        den = _sorted_row_sum(ex)
        lse = mx + np.log(den)
        picked = lv[np.arange(k), y][:, None]
        value = [[_sorted_total(lse - picked) / k]]

        def backward_fn(g):
            p = ex / den
            p[np.arange(k), y] -= 1.0
            return ((g[0, 0] / k) * p,)

        return self._record(value, (logits.index,), backward_fn)

    # ---- reverse pass ----

    def backward(self, loss: Var) -> Gradients:
        """Gradients of a 1x1 loss with respect to every registered parameter."""
        lv = self._value(loss)
        if lv.shape != (1, 1):
            raise ValueError("backward: loss must be 1x1")
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[loss.index] = np.ones((1, 1), dtype=np.float64)
        for i in range(loss.index, -1, -1):
            node = self._nodes[i]
            g = grads[i]
            if g is None or node.backward_fn is None or not node.needs_grad:
                continue
            for pidx, pg in zip(node.parents, node.backward_fn(g)):
                if not self._nodes[pidx].needs_grad:
                    continue
                grads[pidx] = pg if grads[pidx] is None else grads[pidx] + pg
        table = {}
        for i in self._params:
            table[i] = grads[i] if grads[i] is not None else np.zeros_like(self._nodes[i].value)
        return Gradients(self, table)


@dataclass(frozen=True)
class Mlp2:
    """Two-layer perceptron with a ReLU hidden activation."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w1", as_matrix(self.w1, "w1"))
        object.__setattr__(self, "b1", as_matrix(self.b1, "b1"))
        object.__setattr__(self, "w2", as_matrix(self.w2, "w2"))
        object.__setattr__(self, "b2", as_matrix(self.b2, "b2"))
        if self.b1.shape != (1, self.w1.shape[1]):
            raise ValueError("Mlp2: b1 shape does not match w1")
        if self.w2.shape[0] != self.w1.shape[1]:
            raise ValueError("Mlp2: w2 rows must equal w1 cols")
        if self.b2.shape != (1, self.w2.shape[1]):
            raise ValueError("Mlp2: b2 shape does not match w2")

    @property
    def d_in(self):
        return self.w1.shape[0]

    @property
    def d_out(self):
        return self.w2.shape[1]

    @staticmethod
    def random(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int, scale: float = 0.1) -> "Mlp2":
        return Mlp2(
            w1=scale * rng.standard_normal((d_in, d_hidden)),
            b1=np.zeros((1, d_hidden)),
            w2=scale * rng.standard_normal((d_hidden, d_out)),
            b2=np.zeros((1, d_out)),
        )

    def apply(self, x) -> np.ndarray:
        """Forward pass outside any tape."""
        x = as_matrix(x, "mlp input")
        h = np.maximum(matmul(x, self.w1) + self.b1, 0.0)
        return matmul(h, self.w2) + self.b2


@dataclass(frozen=True)
class Mlp2Vars:
    """An Mlp2 lifted onto a tape."""

    w1: Var
    b1: Var
    w2: Var
    b2: Var


def lift_mlp2(tape: Tape, mlp: Mlp2, trainable: bool = True, name: str = "mlp") -> Mlp2Vars:
    make = tape.param if trainable else tape.constant
    return Mlp2Vars(
        w1=make(mlp.w1, f"{name}.w1"),
        b1=make(mlp.b1, f"{name}.b1"),
        w2=make(mlp.w2, f"{name}.w2"),
        b2=make(mlp.b2, f"{name}.b2"),
    )


def mlp2_forward(tape: Tape, x: Var, mlp: Mlp2Vars) -> Var:
    h = tape.relu(tape.add_bias(tape.matmul(x, mlp.w1), mlp.b1))
    return tape.add_bias(tape.matmul(h, mlp.w2), mlp.b2)


def finite_difference_gradients(fn, params: dict, h: float = 1e-5) -> dict:
    """Central-difference gradients of a scalar function of named arrays.

    `fn(params)` must return a float and read the arrays fresh on each call.
    Arrays are perturbed in place and restored.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(params)
            flat[i] = orig - h
            lo = fn(params)
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * h)
        grads[name] = g
    return grads
