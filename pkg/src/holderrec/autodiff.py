"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

All arithmetic used by the encoder, the edge scorer and the loss goes
through the primitives in this module.  Each primitive accepts plain numpy
arrays or :class:`Tensor` operands.  While gradient recording is enabled
and at least one operand is attached to the recorded graph, the primitive
returns a ``Tensor`` that knows how to push gradients back to its parents;
otherwise it returns a raw ndarray.  Inference and finite-difference
sweeps therefore skip all tape overhead while running the exact same
arithmetic as training.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

_grad_enabled = True


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    """Backward requested without a recorded forward pass."""


@contextmanager
def no_grad():
    """Disable gradient recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A 2-D float64 value with an optional gradient and tape linkage.

    Leaf tensors created with ``requires_grad=True`` accumulate gradients
    when :meth:`backward` is called on a scalar result derived from them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_pull")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._pull = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __float__(self):
        if self.data.size != 1:
            raise ShapeError(f"cannot convert shape {self.data.shape} to a scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Push gradients of this scalar back to every recorded parent."""
        if not self._parents:
            raise TapeError("backward called on a tensor with no recorded computation")
        if self.data.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got shape {self.data.shape}")
        order = _toposort(self)
        self._accumulate(np.ones((1, 1)))
        for node in order:
            if node._pull is not None and node.grad is not None:
                node._pull(node.grad)


def _toposort(root: Tensor):
    """Reverse topological order of the recorded graph (iterative)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def value(x) -> np.ndarray:
    """The plain ndarray behind a Tensor, or the array itself."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def scalar(x) -> float:
    """A python float from a 1x1 result (Tensor, array, or number)."""
    if isinstance(x, Tensor):
        return float(x)
    if isinstance(x, np.ndarray):
        if x.size != 1:
            raise ShapeError(f"cannot convert shape {x.shape} to a scalar")
        return float(x.reshape(-1)[0])
    return float(x)


def _live(x) -> bool:
    return isinstance(x, Tensor) and (x.requires_grad or bool(x._parents))


def _check2d(a, name):
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D operand, got shape {a.shape}")
    return a


def _ensure_finite(out, name):
    # the cheap sum catches any NaN/Inf; the full scan only confirms that a
    # non-finite total was not a plain overflow of finite entries
    if not math.isfinite(float(out.sum())) and not np.isfinite(out).all():
        raise NonFiniteError(f"{name} produced a non-finite value")
    return out


def _emit(out, parents, name):
    """Wrap an op result; parents is a list of (tensor, pull_fn) pairs."""
    _ensure_finite(out, name)
    if not (_grad_enabled and parents):
        return out
    t = Tensor(out)
    t._parents = tuple(p for p, _ in parents)
    pulls = tuple(f for _, f in parents)
    ts = t._parents

    def pull(gout):
        for p, f in zip(ts, pulls):
            p._accumulate(f(gout))

    t._pull = pull
    return t


# ---------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------

def matmul(a, b):
    av, bv = _check2d(value(a), "matmul"), _check2d(value(b), "matmul")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: shapes {av.shape} and {bv.shape} do not conform")
    out = av @ bv
    parents = []
    if _live(a):
        parents.append((a, lambda g: g @ bv.T))
    if _live(b):
        parents.append((b, lambda g: av.T @ g))
    return _emit(out, parents, "matmul")


def transpose(a):
    av = _check2d(value(a), "transpose")
    out = av.T.copy()
    parents = [(a, lambda g: g.T.copy())] if _live(a) else []
    return _emit(out, parents, "transpose")


def add(a, b):
    """Elementwise sum; the second operand may be a scalar, an equal-shape
    matrix, or a 1-row matrix broadcast down the rows (and symmetrically)."""
    av = _check2d(value(a), "add")
    if isinstance(b, (int, float)):
        out = av + float(b)
        parents = [(a, lambda g: g)] if _live(a) else []
        return _emit(out, parents, "add")
    bv = _check2d(value(b), "add")
    if av.shape != bv.shape:
        row_a = av.shape[0] == 1 and bv.shape[0] > 1 and av.shape[1] == bv.shape[1]
        row_b = bv.shape[0] == 1 and av.shape[0] > 1 and av.shape[1] == bv.shape[1]
        if not (row_a or row_b):
            raise ShapeError(f"add: shapes {av.shape} and {bv.shape} do not conform")
    out = av + bv
    parents = []
    if _live(a):
        if av.shape[0] == 1 and out.shape[0] > 1:
            parents.append((a, lambda g: g.sum(axis=0, keepdims=True)))
        else:
            parents.append((a, lambda g: g))
    if _live(b):
        if bv.shape[0] == 1 and out.shape[0] > 1:
            parents.append((b, lambda g: g.sum(axis=0, keepdims=True)))
        else:
            parents.append((b, lambda g: g))
    return _emit(out, parents, "add")


def mul(a, b):
    """Elementwise product; the second operand may be a python scalar."""
    av = _check2d(value(a), "mul")
    if isinstance(b, (int, float)):
        s = float(b)
        out = av * s
        parents = [(a, lambda g: g * s)] if _live(a) else []
        return _emit(out, parents, "mul")
    bv = _check2d(value(b), "mul")
    if av.shape != bv.shape:
        raise ShapeError(f"mul: shapes {av.shape} and {bv.shape} do not conform")
    out = av * bv
    parents = []
    if _live(a):
        parents.append((a, lambda g: g * bv))
    if _live(b):
        parents.append((b, lambda g: g * av))
    return _emit(out, parents, "mul")


def relu(a):
    av = _check2d(value(a), "relu")
    out = np.maximum(av, 0.0)
    # subgradient at 0 is 0
    parents = [(a, lambda g: g * (av > 0.0))] if _live(a) else []
    return _emit(out, parents, "relu")


def _sigmoid_array(av):
    # scipy's expit evaluates the stable branch in C for either sign
    return expit(av)


def sigmoid(a):
    """Numerically stable logistic function, 1/(1+exp(-x))."""
    av = _check2d(value(a), "sigmoid")
    out = _sigmoid_array(av)
    parents = [(a, lambda g: g * out * (1.0 - out))] if _live(a) else []
    return _emit(out, parents, "sigmoid")


def tanh(a):
    av = _check2d(value(a), "tanh")
    out = np.tanh(av)
    parents = [(a, lambda g: g * (1.0 - out * out))] if _live(a) else []
    return _emit(out, parents, "tanh")


def log(a):
    av = _check2d(value(a), "log")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    parents = [(a, lambda g: g / av)] if _live(a) else []
    return _emit(out, parents, "log")


def clamp(a, lo: float, hi: float):
    av = _check2d(value(a), "clamp")
    out = np.clip(av, lo, hi)
    mask = (av >= lo) & (av <= hi)
    parents = [(a, lambda g: g * mask)] if _live(a) else []
    return _emit(out, parents, "clamp")


def concat_cols(a, b):
    av, bv = _check2d(value(a), "concat_cols"), _check2d(value(b), "concat_cols")
    if av.shape[0] != bv.shape[0]:
        raise ShapeError(f"concat_cols: row counts {av.shape} vs {bv.shape}")
    out = np.concatenate([av, bv], axis=1)
    da = av.shape[1]
    parents = []
    if _live(a):
        parents.append((a, lambda g: g[:, :da]))
    if _live(b):
        parents.append((b, lambda g: g[:, da:]))
    return _emit(out, parents, "concat_cols")


def concat_rows(parts):
    """Stack row blocks vertically; every block must share the column count."""
    if not parts:
        raise ShapeError("concat_rows: no blocks given")
    vals = [_check2d(value(p), "concat_rows") for p in parts]
    cols = vals[0].shape[1]
    for v in vals[1:]:
        if v.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ ({cols} vs {v.shape[1]})")
    out = np.concatenate(vals, axis=0)
    parents = []
    offset = 0
    for p, v in zip(parts, vals):
        lo, hi = offset, offset + v.shape[0]
        if _live(p):
            parents.append((p, lambda g, lo=lo, hi=hi: g[lo:hi]))
        offset = hi
    return _emit(out, parents, "concat_rows")


def row_mean(a):
    """Column-wise mean over the rows: (n, d) -> (1, d)."""
    av = _check2d(value(a), "row_mean")
    n = av.shape[0]
    if n == 0:
        raise ShapeError("row_mean of an empty matrix")
    out = av.mean(axis=0, keepdims=True)
    parents = [(a, lambda g: np.repeat(g / n, n, axis=0))] if _live(a) else []
    return _emit(out, parents, "row_mean")


def row_max(a):
    """Column-wise max over the rows: (n, d) -> (1, d).

    The gradient routes to the first occurrence of each column maximum.
    """
    av = _check2d(value(a), "row_max")
    if av.shape[0] == 0:
        raise ShapeError("row_max of an empty matrix")
    out = av.max(axis=0, keepdims=True)
    if _live(a):
        idx = av.argmax(axis=0)

        def pull(g):
            z = np.zeros_like(av)
            z[idx, np.arange(av.shape[1])] = g[0]
            return z

        return _emit(out, [(a, pull)], "row_max")
    return _emit(out, [], "row_max")


def row_sum(a):
    """Per-row sum across columns: (n, d) -> (n, 1)."""
    av = _check2d(value(a), "row_sum")
    out = av.sum(axis=1, keepdims=True)
    d = av.shape[1]
    parents = [(a, lambda g: np.repeat(g, d, axis=1))] if _live(a) else []
    return _emit(out, parents, "row_sum")


def sum_all(a):
    """Sum of all entries as a (1, 1) matrix."""
    av = _check2d(value(a), "sum_all")
    out = np.array([[av.sum()]])
    parents = [(a, lambda g: np.full(av.shape, g[0, 0]))] if _live(a) else []
    return _emit(out, parents, "sum_all")


def take_rows(a, indices):
    """Gather rows by index: (n, d) -> (k, d)."""
    av = _check2d(value(a), "take_rows")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= av.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {av.shape[0]} rows")
    out = av[idx]
    if _live(a):

        def pull(g):
            z = np.zeros_like(av)
            np.add.at(z, idx, g)
            return z

        return _emit(out, [(a, pull)], "take_rows")
    return _emit(out, [], "take_rows")


def _segment_layout(xs, lengths, name):
    lens = np.asarray(lengths, dtype=np.intp)
    if lens.ndim != 1:
        raise ShapeError(f"{name}: lengths must be 1-D")
    if lens.size and lens.min() < 0:
        raise ShapeError(f"{name}: negative segment length")
    if int(lens.sum()) != xs.shape[0]:
        raise ShapeError(
            f"{name}: segment lengths sum to {int(lens.sum())} but the matrix has "
            f"{xs.shape[0]} rows")
    starts = np.zeros(lens.size, dtype=np.intp)
    if lens.size > 1:
        np.cumsum(lens[:-1], out=starts[1:])
    return lens, starts


def _segment_sums(xs, lens, starts):
    sums = np.zeros((lens.size, xs.shape[1]))
    nonzero = lens > 0
    if xs.shape[0] and nonzero.any():
        sums[nonzero] = np.add.reduceat(xs, starts[nonzero], axis=0)
    return sums


def segment_sum(a, lengths):
    """Sum consecutive row blocks: (sum(lengths), d) -> (len(lengths), d).

    Empty segments produce zero rows.
    """
    av = _check2d(value(a), "segment_sum")
    lens, starts = _segment_layout(av, lengths, "segment_sum")
    out = _segment_sums(av, lens, starts)
    parents = [(a, lambda g: np.repeat(g, lens, axis=0))] if _live(a) else []
    return _emit(out, parents, "segment_sum")


def segment_mean(a, lengths):
    """Mean of consecutive row blocks; empty segments produce zero rows."""
    av = _check2d(value(a), "segment_mean")
    lens, starts = _segment_layout(av, lengths, "segment_mean")
    denom = np.maximum(lens, 1).astype(np.float64)[:, None]
    out = _segment_sums(av, lens, starts) / denom
    parents = ([(a, lambda g: np.repeat(g / denom, lens, axis=0))]
               if _live(a) else [])
    return _emit(out, parents, "segment_mean")


def segment_max(a, lengths):
    """Columnwise max of consecutive row blocks; empty segments give zeros.

    The gradient routes to the first occurrence of each column maximum
    within its segment.
    """
    av = _check2d(value(a), "segment_max")
    lens, starts = _segment_layout(av, lengths, "segment_max")
    out = np.zeros((lens.size, av.shape[1]))
    nonzero = lens > 0
    if av.shape[0] and nonzero.any():
        out[nonzero] = np.maximum.reduceat(av, starts[nonzero], axis=0)
    if _live(a):

        def pull(g):
            z = np.zeros_like(av)
            cols = np.arange(av.shape[1])
            for s in np.flatnonzero(lens):
                block = av[starts[s]:starts[s] + lens[s]]
                z[starts[s] + block.argmax(axis=0), cols] += g[s]
            return z

        return _emit(out, [(a, pull)], "segment_max")
    return _emit(out, [], "segment_max")


def scale_rows(a, factors):
    """Multiply each row by a constant per-row factor (not differentiated
    with respect to the factors)."""
    av = _check2d(value(a), "scale_rows")
    fv = np.asarray(factors, dtype=np.float64).reshape(-1)
    if fv.size != av.shape[0]:
        raise ShapeError(f"scale_rows: {fv.size} factors for {av.shape[0]} rows")
    col = fv[:, None]
    out = av * col
    parents = [(a, lambda g: g * col)] if _live(a) else []
    return _emit(out, parents, "scale_rows")


_LSTM_PARAM_KEYS = ("Wi", "Ui", "bi", "Wf", "Uf", "bf",
                    "Wo", "Uo", "bo", "Wc", "Uc", "bc")


def lstm_chain_batch(X, lengths, Wi, Ui, bi, Wf, Uf, bf, Wo, Uo, bo, Wc, Uc, bc):
    """Run a single-layer LSTM cell over many row segments at once.

    X stacks the segments' rows consecutively (in consumption order);
    ``lengths`` gives the rows per segment.  Returns one final hidden
    state per segment, zeros for empty segments.

    Segments run in lockstep, longest first, inside one primitive with a
    hand-written reverse sweep: chains are short but numerous, so
    composing per-step primitives would dominate runtime.  The gradient
    is exercised against finite differences in the test suite.
    """
    xs = _check2d(value(X), "lstm_chain")
    d = xs.shape[1]
    operands = (Wi, Ui, bi, Wf, Uf, bf, Wo, Uo, bo, Wc, Uc, bc)
    vals = {key: value(p) for key, p in zip(_LSTM_PARAM_KEYS, operands)}
    for key in ("Wi", "Ui", "Wf", "Uf", "Wo", "Uo", "Wc", "Uc"):
        if vals[key].shape != (d, d):
            raise ShapeError(f"lstm_chain: {key} must be ({d}, {d}), got {vals[key].shape}")
    for key in ("bi", "bf", "bo", "bc"):
        if vals[key].shape != (1, d):
            raise ShapeError(f"lstm_chain: {key} must be (1, {d}), got {vals[key].shape}")
    lens, starts = _segment_layout(xs, lengths, "lstm_chain")

    # longest chains first so the set of still-active chains is a prefix
    order = np.argsort(-lens, kind="stable")
    sorted_len = lens[order]
    sorted_start = starts[order]
    max_len = int(sorted_len[0]) if sorted_len.size else 0
    active_at = [int(np.searchsorted(-sorted_len, -(t + 1), side="right"))
                 for t in range(max_len)]

    wiT, uiT = vals["Wi"].T, vals["Ui"].T
    wfT, ufT = vals["Wf"].T, vals["Uf"].T
    woT, uoT = vals["Wo"].T, vals["Uo"].T
    wcT, ucT = vals["Wc"].T, vals["Uc"].T
    out = np.zeros((lens.size, d))
    h = np.zeros((active_at[0] if max_len else 0, d))
    c = np.zeros_like(h)
    cache = []
    for t in range(max_len):
        a = active_at[t]
        if a < h.shape[0]:
            # chains of length t finished on the previous step
            ended = slice(a, h.shape[0])
            out[order[ended]] = h[ended]
            h, c = h[:a], c[:a]
        idx = sorted_start[:a] + t
        x = xs[idx]
        i = _sigmoid_array(x @ wiT + h @ uiT + vals["bi"])
        f = _sigmoid_array(x @ wfT + h @ ufT + vals["bf"])
        o = _sigmoid_array(x @ woT + h @ uoT + vals["bo"])
        g = np.tanh(x @ wcT + h @ ucT + vals["bc"])
        c_prev, h_prev = c, h
        c = f * c + i * g
        h = o * np.tanh(c)
        cache.append((idx, x, h_prev, c_prev, i, f, o, g, c))
    if max_len:
        out[order[:h.shape[0]]] = h

    live = [("X", X)] if _live(X) else []
    live += [(key, p) for key, p in zip(_LSTM_PARAM_KEYS, operands) if _live(p)]
    if not (_grad_enabled and live):
        return _ensure_finite(out, "lstm_chain")

    def pull(gout):
        grads = {key: np.zeros_like(vals[key]) for key in _LSTM_PARAM_KEYS}
        dX = np.zeros_like(xs)
        gout_sorted = gout[order]
        dh = np.zeros((0, d))
        dc = np.zeros((0, d))
        for t in range(max_len - 1, -1, -1):
            a = active_at[t]
            if dh.shape[0] < a:
                # chains ending exactly here join the reverse sweep
                dh = np.concatenate([dh, gout_sorted[dh.shape[0]:a]], axis=0)
                dc = np.concatenate([dc, np.zeros((a - dc.shape[0], d))], axis=0)
            idx, x, h_prev, c_prev, i, f, o, g, c_t = cache[t]
            tc = np.tanh(c_t)
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            dai = (dc * g) * i * (1.0 - i)
            daf = (dc * c_prev) * f * (1.0 - f)
            dao = do * o * (1.0 - o)
            dac = (dc * i) * (1.0 - g * g)
            grads["Wi"] += dai.T @ x
            grads["Ui"] += dai.T @ h_prev
            grads["bi"] += dai.sum(axis=0, keepdims=True)
            grads["Wf"] += daf.T @ x
            grads["Uf"] += daf.T @ h_prev
            grads["bf"] += daf.sum(axis=0, keepdims=True)
            grads["Wo"] += dao.T @ x
            grads["Uo"] += dao.T @ h_prev
            grads["bo"] += dao.sum(axis=0, keepdims=True)
            grads["Wc"] += dac.T @ x
            grads["Uc"] += dac.T @ h_prev
            grads["bc"] += dac.sum(axis=0, keepdims=True)
            dX[idx] = (dai @ vals["Wi"] + daf @ vals["Wf"]
                       + dao @ vals["Wo"] + dac @ vals["Wc"])
            dh = (dai @ vals["Ui"] + daf @ vals["Uf"]
                  + dao @ vals["Uo"] + dac @ vals["Uc"])
            dc = dc * f
        grads["X"] = dX
        for key, p in live:
            p._accumulate(grads[key])

    t_out = Tensor(_ensure_finite(out, "lstm_chain"))
    t_out._parents = tuple(p for _, p in live)
    t_out._pull = pull
    return t_out


def lstm_chain(X, *gate_params):
    """Final LSTM hidden state over the rows of X as a single segment."""
    xs = _check2d(value(X), "lstm_chain")
    if xs.shape[0] == 0:
        raise ShapeError("lstm_chain needs at least one input row")
    return lstm_chain_batch(X, np.array([xs.shape[0]]), *gate_params)


def finite_difference_grad(loss_fn, params, epsilon: float = 1e-5):
    """Central-difference gradient estimate of ``loss_fn`` per parameter.

    ``loss_fn`` takes the parameter store and returns a scalar; it must be
    pure and deterministic.  Returns a dict of arrays shaped like each
    parameter.  Entries are perturbed in place and restored.
    """
    grads = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            g = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                f_plus = scalar(loss_fn(params))
                flat[i] = orig - epsilon
                f_minus = scalar(loss_fn(params))
                flat[i] = orig
                g[i] = (f_plus - f_minus) / (2.0 * epsilon)
            grads[name] = g.reshape(p.data.shape)
    return grads
