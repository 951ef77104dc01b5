"""Dense float64 matrices with a reverse-mode differentiation tape.

Values are plain 2-D numpy arrays of 64-bit reals.  A ``Tape`` records every
primitive applied to ``Var`` handles built on it; ``Tape.backward`` replays
the records in reverse, accumulating vector-Jacobian products.  Tapes are
rebuilt for every forward pass (define-by-run) and are single-owner: one
forward plus backward per tape.

Primitives accept a mix of ``Var`` operands and raw arrays/scalars.  Raw
operands are captured as constants: no gradient is recorded for them, which
is how stop-gradient semantics (e.g. treating prototype rows as constants)
fall out naturally.

Every primitive checks its output for non-finite entries and raises
``NumericError`` on overflow, so any matrix observable through the public
API is finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractError,
    DegenerateVectorError,
    DimensionError,
    NumericError,
    ParameterError,
)

# Rows with a smaller Euclidean norm are considered degenerate for cosine work.
NORM_EPS = 1e-12
# log() clamps its input here instead of returning -inf.
LOG_FLOOR = 1e-300


def as_matrix(x) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array; scalars become 1x1."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("matrix contains non-finite entries")
    return arr


class _Node:
    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.parents = parents  # tuple of earlier node ids
        self.vjp = vjp  # grad_out -> tuple of parent grads, aligned with parents


class Var:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


class Tape:
    """Ordered record of primitive operations; node inputs always precede outputs."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, value) -> Var:
        """Register an input matrix as a differentiable leaf."""
        return self._record(as_matrix(value).copy(), (), None)

    def _record(self, value, parents, vjp) -> Var:
        if not np.all(np.isfinite(value)):
            raise NumericError("operation produced non-finite entries")
        self.nodes.append(_Node(value, parents, vjp))
        return Var(self, len(self.nodes) - 1)

    def backward(self, loss: Var) -> dict[int, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every recorded node.

        Nodes unreachable from the loss keep an all-zero gradient.  The sweep
        is a pure function of the tape, so repeated calls are bit-identical.
        """
        if loss.tape is not self:
            raise ContractError("loss was recorded on a different tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"loss must be a 1x1 scalar, got shape {loss.value.shape}")
        grads = {i: np.zeros_like(node.value) for i, node in enumerate(self.nodes)}
        grads[loss.id] = np.ones((1, 1))
        for i in range(loss.id, -1, -1):
            node = self.nodes[i]
            if node.vjp is None or not node.parents:
                continue
            g = grads[i]
            if not g.any():
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                if not np.all(np.isfinite(pg)):
                    raise NumericError("backward sweep produced non-finite gradients")
                grads[pid] = grads[pid] + pg
        return grads


def _operand(x):
    if isinstance(x, Var):
        return x.value, x
    return as_matrix(x), None


def _tape_of(*ops) -> Tape:
    tape = None
    for v in ops:
        if isinstance(v, Var):
            if tape is None:
                tape = v.tape
            elif v.tape is not tape:
                raise ContractError("operands live on different tapes")
    if tape is None:
        raise ContractError("at least one operand must be a Var")
    return tape


def _emit(tape, value, var_grad_pairs):
    """Record a node whose vjp covers only the Var operands."""
    parents = tuple(v.id for v, _ in var_grad_pairs if v is not None)
    funcs = tuple(f for v, f in var_grad_pairs if v is not None)
    vjp = (lambda g: tuple(f(g) for f in funcs)) if parents else None
    return tape._record(value, parents, vjp)


def _unbroadcast(g, shape):
    out = g
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise DimensionError(f"gradient shape {g.shape} does not reduce to {shape}")
    return out


# ---------------------------------------------------------------------------
# Binary primitives


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    av, avar = _operand(a)
    bv, bvar = _operand(b)
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {av.shape} @ {bv.shape}")
    value = av @ bv
    return _emit(tape, value, [(avar, lambda g: g @ bv.T), (bvar, lambda g: av.T @ g)])


def _broadcast_value(av, bv, op):
    try:
        return op(av, bv)
    except ValueError:
        raise DimensionError(f"shapes {av.shape} and {bv.shape} do not broadcast") from None


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    av, avar = _operand(a)
    bv, bvar = _operand(b)
    value = _broadcast_value(av, bv, np.add)
    return _emit(tape, value, [
        (avar, lambda g: _unbroadcast(g, av.shape)),
        (bvar, lambda g: _unbroadcast(g, bv.shape)),
    ])


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    av, avar = _operand(a)
    bv, bvar = _operand(b)
    value = _broadcast_value(av, bv, np.subtract)
    return _emit(tape, value, [
        (avar, lambda g: _unbroadcast(g, av.shape)),
        (bvar, lambda g: _unbroadcast(-g, bv.shape)),
    ])


def mul(a, b) -> Var:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    tape = _tape_of(a, b)
    av, avar = _operand(a)
    bv, bvar = _operand(b)
    value = _broadcast_value(av, bv, np.multiply)
    return _emit(tape, value, [
        (avar, lambda g: _unbroadcast(g * bv, av.shape)),
        (bvar, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


# ---------------------------------------------------------------------------
# Elementwise primitives


def scale(a, c: float) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    c = float(c)
    return _emit(tape, av * c, [(avar, lambda g: g * c)])


def exp(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    with np.errstate(over="ignore"):
        value = np.exp(av)
    return _emit(tape, value, [(avar, lambda g: g * value)])


def log(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    if np.any(av < 0):
        raise NumericError("log of a negative entry")
    clamped = np.maximum(av, LOG_FLOOR)
    return _emit(tape, np.log(clamped), [(avar, lambda g: g / clamped)])


def sigmoid(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    value = np.empty_like(av)
    pos = av >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ev = np.exp(av[~pos])
    value[~pos] = ev / (1.0 + ev)
    return _emit(tape, value, [(avar, lambda g: g * value * (1.0 - value))])


def relu(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    mask = av > 0
    return _emit(tape, np.where(mask, av, 0.0), [(avar, lambda g: g * mask)])


def absval(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    return _emit(tape, np.abs(av), [(avar, lambda g: g * np.sign(av))])


def rsqrt(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    if np.any(av <= 0):
        raise NumericError("rsqrt of a non-positive entry")
    value = 1.0 / np.sqrt(av)  # sqrt is correctly rounded; exact for squares
    return _emit(tape, value, [(avar, lambda g: g * (-0.5) * value / av)])


# ---------------------------------------------------------------------------
# Structural primitives


def transpose(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    return _emit(tape, av.T.copy(), [(avar, lambda g: g.T.copy())])


def row_mean(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    if av.shape[1] < 1:
        raise DimensionError("row_mean needs at least one column")
    cols = av.shape[1]
    value = av.mean(axis=1, keepdims=True)
    return _emit(tape, value, [(avar, lambda g: np.repeat(g, cols, axis=1) / cols)])


def row_sum(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    cols = av.shape[1]
    value = av.sum(axis=1, keepdims=True)
    return _emit(tape, value, [(avar, lambda g: np.repeat(g, cols, axis=1))])


def sum_all(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    value = np.array([[av.sum()]])
    return _emit(tape, value, [(avar, lambda g: np.full(av.shape, g[0, 0]))])


def mean_all(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    if av.size == 0:
        raise DimensionError("mean_all of an empty matrix")
    n = av.size
    value = np.array([[av.sum() / n]])
    return _emit(tape, value, [(avar, lambda g: np.full(av.shape, g[0, 0] / n))])


def frobenius(a) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    nrm = float(np.sqrt((av * av).sum()))
    value = np.array([[nrm]])

    def grad(g):
        if nrm == 0.0:
            return np.zeros_like(av)
        return g[0, 0] * av / nrm

    return _emit(tape, value, [(avar, grad)])


def vstack(a, b) -> Var:
    tape = _tape_of(a, b)
    av, avar = _operand(a)
    bv, bvar = _operand(b)
    if av.shape[1] != bv.shape[1]:
        raise DimensionError(f"vstack: column counts differ, {av.shape} vs {bv.shape}")
    r = av.shape[0]
    value = np.vstack([av, bv])
    return _emit(tape, value, [
        (avar, lambda g: g[:r].copy()),
        (bvar, lambda g: g[r:].copy()),
    ])


def hstack(a, b) -> Var:
    tape = _tape_of(a, b)
    av, avar = _operand(a)
    bv, bvar = _operand(b)
    if av.shape[0] != bv.shape[0]:
        raise DimensionError(f"hstack: row counts differ, {av.shape} vs {bv.shape}")
    c = av.shape[1]
    value = np.hstack([av, bv])
    return _emit(tape, value, [
        (avar, lambda g: g[:, :c].copy()),
        (bvar, lambda g: g[:, c:].copy()),
    ])


def slice_rows(a, start: int, stop: int) -> Var:
    tape = _tape_of(a)
    av, avar = _operand(a)
    if not (0 <= start <= stop <= av.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] out of range for {av.shape}")

    def grad(g):
        out = np.zeros_like(av)
        out[start:stop] = g
        return out

    return _emit(tape, av[start:stop].copy(), [(avar, grad)])


# ---------------------------------------------------------------------------
# Composite-but-primitive row operations


def row_softmax(a) -> Var:
    """Row-wise softmax, stabilised by subtracting each row's max."""
    tape = _tape_of(a)
    av, avar = _operand(a)
    if av.shape[1] < 1:
        raise DimensionError("row_softmax needs at least one column")
    shifted = av - av.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def grad(g):
        return p * (g - (g * p).sum(axis=1, keepdims=True))

    return _emit(tape, p, [(avar, grad)])


def cosine_sim(a, b) -> Var:
    """All-pairs cosine similarity between the rows of ``a`` and of ``b``.

    Output is (a.rows x b.rows).  Zero-norm rows are an error: silently
    clamping would hide a collapsed representation.
    """
    tape = _tape_of(a, b)
    av, avar = _operand(a)
    bv, bvar = _operand(b)
    if av.shape[1] != bv.shape[1]:
        raise DimensionError(f"cosine_sim: widths differ, {av.shape} vs {bv.shape}")
    na = np.linalg.norm(av, axis=1, keepdims=True)
    nb = np.linalg.norm(bv, axis=1, keepdims=True)
    for name, norms in (("left", na), ("right", nb)):
        bad = np.nonzero(norms[:, 0] <= NORM_EPS)[0]
        if bad.size:
            raise DegenerateVectorError(f"cosine_sim: zero-norm {name} row {bad[0]}")
    ah = av / na
    bh = bv / nb
    value = ah @ bh.T

    def grad_a(g):
        return (g @ bh - (g * value).sum(axis=1, keepdims=True) * ah) / na

    def grad_b(g):
        return (g.T @ ah - (g * value).sum(axis=0)[:, None] * bh) / nb

    return _emit(tape, value, [(avar, grad_a), (bvar, grad_b)])


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def gradcheck(f, params: dict[str, np.ndarray], h: float = 1e-4, tol: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f(tape, vars)`` must build and return a scalar loss ``Var`` from the
    leaf ``vars`` (one per entry of ``params``) and must be deterministic.
    The relative error of an entry is ``|g_t - g_fd| / max(1, |g_t|, |g_fd|)``.
    """
    if h <= 0:
        raise ParameterError("gradcheck: step h must be positive")
    base = {name: as_matrix(value).copy() for name, value in params.items()}

    tape = Tape()
    leaves = {name: tape.leaf(value) for name, value in base.items()}
    loss = f(tape, leaves)
    grads = tape.backward(loss)
    tape_grads = {name: grads[leaves[name].id] for name in base}

    def loss_at(values):
        t = Tape()
        out = f(t, {name: t.leaf(v) for name, v in values.items()})
        return float(out.value[0, 0])

    per_param = {}
    for name, value in base.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            samples = []
            for sign in (1.0, -1.0):
                shifted = dict(base)
                bumped = value.copy()
                bumped[idx] += sign * h
                shifted[name] = bumped
                try:
                    samples.append(loss_at(shifted))
                except NumericError as e:
                    raise NumericError(
                        f"gradcheck: non-finite loss perturbing {name}{idx}: {e}"
                    ) from None
            fd[idx] = (samples[0] - samples[1]) / (2.0 * h)
        gt = tape_grads[name]
        denom = np.maximum(1.0, np.maximum(np.abs(gt), np.abs(fd)))
        rel = np.abs(gt - fd) / denom
        per_param[name] = float(rel.max()) if rel.size else 0.0

    max_rel = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(per_param=per_param, max_rel_err=max_rel, tol=tol)
