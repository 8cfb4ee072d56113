"""Parameter-space automatic differentiation over batched jet arrays.

The spatial direction is handled by the jet kernels in :mod:`selfsim.jets`;
this module differentiates *through* those kernels with respect to network
parameters.  A computation is traced onto a :class:`Tape` as a flat list of
nodes (the recorded evaluation list); forward tangent sweeps give Jacobian-
vector products and reverse adjoint sweeps give vector-Jacobian products
and gradients.  No graph mutation happens after tracing: re-running a step
re-traces eagerly, which costs a few hundred numpy dispatches.

Ops are free functions.  Arguments may be :class:`Var` (traced) or plain
arrays/floats (constants).  An op whose inputs are all constants folds
immediately and returns a plain array, so the same model-building code
serves traced training, constant-lambda evaluation and plain inference.

Key identity used by every composed elementary function f: the tangent of
``u -> f o u`` in jet space is ``jet_mul(jet(f' o u), du)``, because
perturbations and y-derivatives commute.  Adjoints are the transposes of
those jet products.
"""

from __future__ import annotations

import numpy as np

from . import jets as J
from .errors import ContractError


class Var:
    """Handle to a traced node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", nid: int):
        self.tape = tape
        self.id = nid

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.value.shape


class Node:
    __slots__ = ("op", "arg_ids", "arg_vals", "consts", "value", "aux")

    def __init__(self, op, arg_ids, arg_vals, consts, value, aux=None):
        self.op = op
        self.arg_ids = arg_ids
        self.arg_vals = arg_vals
        self.consts = consts
        self.value = value
        self.aux = aux


class Tape:
    """Recorded evaluation list with preallocated adjoint/tangent buffers."""

    def __init__(self):
        self.nodes: list[Node] = []

    def input(self, value) -> Var:
        value = np.asarray(value, dtype=float)
        self.nodes.append(Node("input", (), (), {}, value))
        return Var(self, len(self.nodes) - 1)

    def _record(self, op, arg_ids, arg_vals, consts, value, aux=None) -> Var:
        self.nodes.append(Node(op, arg_ids, arg_vals, consts, value, aux))
        return Var(self, len(self.nodes) - 1)

    # ---------------- sweeps ----------------

    def jvp(self, seeds: dict[int, np.ndarray]) -> list:
        """Forward tangent sweep.  seeds maps node id -> tangent array."""
        tang: list = [None] * len(self.nodes)
        for nid, t in seeds.items():
            tang[nid] = np.asarray(t, dtype=float)
        for nid, node in enumerate(self.nodes):
            if node.op == "input":
                continue
            ts = [None if i is None else tang[i] for i in node.arg_ids]
            if all(t is None for t in ts):
                continue
            out = _JVP[node.op](node, ts)
            if tang[nid] is None:
                tang[nid] = out
            else:
                tang[nid] = tang[nid] + out
        return tang

    def vjp(self, out: Var, cotangent) -> list:
        """Reverse adjoint sweep from node ``out`` seeded with cotangent."""
        adj: list = [None] * len(self.nodes)
        adj[out.id] = np.broadcast_to(
            np.asarray(cotangent, dtype=float), self.nodes[out.id].value.shape
        )
        for nid in range(out.id, -1, -1):
            node = self.nodes[nid]
            g = adj[nid]
            if g is None or node.op == "input":
                continue
            contribs = _VJP[node.op](node, g)
            for aid, contrib in zip(node.arg_ids, contribs):
                if aid is None or contrib is None:
                    continue
                if adj[aid] is None:
                    adj[aid] = contrib
                else:
                    adj[aid] = adj[aid] + contrib
        return adj


def _split(args):
    """Normalize op arguments to (tape, arg_ids, arg_vals)."""
    tape = None
    ids, vals = [], []
    for a in args:
        if isinstance(a, Var):
            tape = a.tape
            ids.append(a.id)
            vals.append(a.value)
        else:
            ids.append(None)
            vals.append(np.asarray(a, dtype=float))
    return tape, tuple(ids), tuple(vals)


def _op(name, args, consts, compute):
    tape, ids, vals = _split(args)
    value, aux = compute(vals)
    if tape is None:
        return value
    return tape._record(name, ids, vals, consts, value, aux)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------- elementwise plain ops ----------------


def add(a, b):
    return _op("add", (a, b), {}, lambda v: (v[0] + v[1], None))


def sub(a, b):
    return _op("sub", (a, b), {}, lambda v: (v[0] - v[1], None))


def neg(a):
    return _op("neg", (a,), {}, lambda v: (-v[0], None))


def mul(a, b):
    return _op("mul", (a, b), {}, lambda v: (v[0] * v[1], None))


def recip(a):
    return _op("recip", (a,), {}, lambda v: (1.0 / v[0], None))


def relu(a):
    return _op("relu", (a,), {}, lambda v: (np.maximum(v[0], 0.0), None))


def vsum(a):
    return _op("sum", (a,), {}, lambda v: (np.asarray(v[0].sum()), None))


def reshape(a, shape):
    shape = tuple(shape)
    return _op("reshape", (a,), {"shape": shape}, lambda v: (v[0].reshape(shape), None))


def slice_axis(a, axis: int, start: int, stop: int):
    def compute(v):
        sl = [slice(None)] * v[0].ndim
        sl[axis] = slice(start, stop)
        return v[0][tuple(sl)], None

    return _op("slice", (a,), {"axis": axis, "start": start, "stop": stop}, compute)


def concat(parts, axis: int):
    tape, ids, vals = _split(tuple(parts))
    value = np.concatenate(vals, axis=axis)
    if tape is None:
        return value
    sizes = [v.shape[axis] for v in vals]
    return tape._record("concat", ids, vals, {"axis": axis, "sizes": sizes}, value)


# ---------------- jet ops ----------------


def jmul(a, b):
    return _op("jmul", (a, b), {}, lambda v: (J.jet_mul(v[0], v[1]), None))


def jscale(a, s):
    """Jet (..., K) scaled by a plain scalar (shape () or (1,))."""
    return _op("jscale", (a, s), {}, lambda v: (v[0] * v[1], None))


def jrecip(a):
    def compute(v):
        out = J.jet_recip(v[0])
        return out, -J.jet_mul(out, out)

    return _op("jrecip", (a,), {}, compute)


def _jfn(name):
    def op(a):
        return _op("jfn", (a,), {"fn": name}, lambda v: J.jet_fn_with_local(name, v[0]))

    op.__name__ = "j" + name
    return op


jtanh = _jfn("tanh")
jexp = _jfn("exp")
jlog = _jfn("log")
jsqrt = _jfn("sqrt")
jsin = _jfn("sin")
jcos = _jfn("cos")


def jpow(a, p: float):
    return _op("jpow", (a,), {"p": float(p)}, lambda v: J.jet_pow_with_local(v[0], p))


def jget(a, n: int):
    return _op("jget", (a,), {"n": n}, lambda v: (v[0][..., n], None))


def jtrunc(a, order: int):
    """Restrict a jet to a lower order (view of leading coefficients)."""
    return slice_axis(a, -1, 0, order + 1)


def jdiff(a, m: int = 1):
    """Jet of the m-th derivative: drop leading coefficients."""
    K = (a.value if isinstance(a, Var) else np.asarray(a)).shape[-1]
    if m >= K:
        raise ContractError("derivative shift exceeds jet order")
    return slice_axis(a, -1, m, K)


def jlift(a, order: int):
    """Lift a plain array (constant in y) to a jet of the given order."""

    def compute(v):
        out = np.zeros(v[0].shape + (order + 1,))
        out[..., 0] = v[0]
        return out, None

    return _op("jlift", (a,), {"order": order}, compute)


# ---------------- linear algebra ops ----------------


def dense(x, W, b):
    """Affine layer on jets: x (..., I, K) -> (..., O, K), bias into slot 0."""

    def compute(v):
        xv, Wv, bv = v
        out = np.einsum("oi,...ik->...ok", Wv, xv)
        out[..., :, 0] += bv
        return out, None

    return _op("dense", (x, W, b), {}, compute)


def matmul(M, x):
    """Constant-or-traced matrix times stack of jets: (P,N) @ (N,K)."""
    return _op("matmul", (M, x), {}, lambda v: (v[0] @ v[1], None))


# ---------------- rule tables ----------------


def _jvp_add(node, t):
    a, b = node.arg_vals
    out = 0
    if t[0] is not None:
        out = out + t[0]
    if t[1] is not None:
        out = out + t[1]
    return np.broadcast_to(out, node.value.shape)


def _jvp_sub(node, t):
    out = 0
    if t[0] is not None:
        out = out + t[0]
    if t[1] is not None:
        out = out - t[1]
    return np.broadcast_to(out, node.value.shape)


def _jvp_mul(node, t):
    a, b = node.arg_vals
    out = 0
    if t[0] is not None:
        out = out + t[0] * b
    if t[1] is not None:
        out = out + a * t[1]
    return out


def _jvp_jmul(node, t):
    a, b = node.arg_vals
    out = 0
    if t[0] is not None:
        out = out + J.jet_mul(t[0], b)
    if t[1] is not None:
        out = out + J.jet_mul(a, t[1])
    return out


def _jvp_jscale(node, t):
    a, s = node.arg_vals
    out = 0
    if t[0] is not None:
        out = out + t[0] * s
    if t[1] is not None:
        out = out + a * t[1]
    return out


_JVP = {
    "add": _jvp_add,
    "sub": _jvp_sub,
    "neg": lambda node, t: -t[0],
    "mul": _jvp_mul,
    "recip": lambda node, t: -node.value * node.value * t[0],
    "relu": lambda node, t: t[0] * (node.arg_vals[0] > 0.0),
    "sum": lambda node, t: np.asarray(t[0].sum()),
    "reshape": lambda node, t: t[0].reshape(node.consts["shape"]),
    "slice": lambda node, t: _slice_fwd(node, t[0]),
    "concat": lambda node, t: _concat_fwd(node, t),
    "jmul": _jvp_jmul,
    "jscale": _jvp_jscale,
    "jrecip": lambda node, t: J.jet_mul(node.aux, t[0]),
    "jfn": lambda node, t: J.jet_mul(node.aux, t[0]),
    "jpow": lambda node, t: J.jet_mul(node.aux, t[0]),
    "jget": lambda node, t: t[0][..., node.consts["n"]],
    "jlift": lambda node, t: _jlift_fwd(node, t[0]),
    "dense": lambda node, t: _dense_fwd(node, t),
    "matmul": lambda node, t: _matmul_fwd(node, t),
}


def _slice_fwd(node, t):
    sl = [slice(None)] * t.ndim
    sl[node.consts["axis"]] = slice(node.consts["start"], node.consts["stop"])
    return t[tuple(sl)]


def _concat_fwd(node, t):
    parts = [
        ti if ti is not None else np.zeros_like(v)
        for ti, v in zip(t, node.arg_vals)
    ]
    return np.concatenate(parts, axis=node.consts["axis"])


def _jlift_fwd(node, t):
    out = np.zeros(node.value.shape)
    out[..., 0] = t
    return out


def _dense_fwd(node, t):
    xv, Wv, bv = node.arg_vals
    out = 0
    if t[0] is not None:
        out = out + np.einsum("oi,...ik->...ok", Wv, t[0])
    if t[1] is not None:
        out = out + np.einsum("oi,...ik->...ok", t[1], xv)
    if t[2] is not None:
        z = np.zeros(node.value.shape)
        z[..., :, 0] = t[2]
        out = out + z
    return out


def _matmul_fwd(node, t):
    M, x = node.arg_vals
    out = 0
    if t[0] is not None:
        out = out + t[0] @ x
    if t[1] is not None:
        out = out + M @ t[1]
    return out


def _vjp_add(node, g):
    a, b = node.arg_vals
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _vjp_sub(node, g):
    a, b = node.arg_vals
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _vjp_mul(node, g):
    a, b = node.arg_vals
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _vjp_jmul(node, g):
    a, b = node.arg_vals
    ga = _unbroadcast(J.jet_mul_adjoint(g, b), a.shape)
    gb = _unbroadcast(J.jet_mul_adjoint(g, a), b.shape)
    return ga, gb


def _vjp_jscale(node, g):
    a, s = node.arg_vals
    return _unbroadcast(g * s, a.shape), _unbroadcast(g * a, s.shape)


def _vjp_slice(node, g):
    a = node.arg_vals[0]
    out = np.zeros(a.shape)
    sl = [slice(None)] * a.ndim
    sl[node.consts["axis"]] = slice(node.consts["start"], node.consts["stop"])
    out[tuple(sl)] = g
    return (out,)


def _vjp_concat(node, g):
    axis = node.consts["axis"]
    sizes = node.consts["sizes"]
    outs = []
    pos = 0
    for s in sizes:
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(pos, pos + s)
        outs.append(g[tuple(sl)])
        pos += s
    return tuple(outs)


def _vjp_jget(node, g):
    a = node.arg_vals[0]
    out = np.zeros(a.shape)
    out[..., node.consts["n"]] = g
    return (out,)


def _vjp_dense(node, g):
    xv, Wv, bv = node.arg_vals
    gx = np.einsum("oi,...ok->...ik", Wv, g)
    nI, K = xv.shape[-2], xv.shape[-1]
    nO = g.shape[-2]
    gf = g.reshape(-1, nO, K)
    xf = xv.reshape(-1, nI, K)
    gW = np.einsum("bok,bik->oi", gf, xf)
    gb = gf[..., 0].sum(axis=0)
    return gx, gW, gb


def _vjp_matmul(node, g):
    M, x = node.arg_vals
    gM = np.outer(g, x) if x.ndim == 1 else g @ x.T
    return gM, M.T @ g


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "neg": lambda node, g: (-g,),
    "mul": _vjp_mul,
    "recip": lambda node, g: (-g * node.value * node.value,),
    "relu": lambda node, g: (g * (node.arg_vals[0] > 0.0),),
    "sum": lambda node, g: (np.broadcast_to(g, node.arg_vals[0].shape),),
    "reshape": lambda node, g: (g.reshape(node.arg_vals[0].shape),),
    "slice": _vjp_slice,
    "concat": _vjp_concat,
    "jmul": _vjp_jmul,
    "jscale": _vjp_jscale,
    "jrecip": lambda node, g: (J.jet_mul_adjoint(g, node.aux),),
    "jfn": lambda node, g: (J.jet_mul_adjoint(g, node.aux),),
    "jpow": lambda node, g: (J.jet_mul_adjoint(g, node.aux),),
    "jget": _vjp_jget,
    "jlift": lambda node, g: (g[..., 0],),
    "dense": _vjp_dense,
    "matmul": _vjp_matmul,
}


# ---------------- entry points ----------------


def trace(fn, theta: np.ndarray):
    """Trace ``fn(theta_var) -> Var`` onto a fresh tape."""
    tape = Tape()
    th = tape.input(theta)
    out = fn(th)
    if not isinstance(out, Var):
        raise ContractError("traced function must depend on theta")
    return tape, th, out


def param_gradient(fn, theta: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss ``fn(theta_var)`` at theta.

    The evaluation must be a composition of the ops in this module.
    """
    tape, th, out = trace(fn, theta)
    if out.value.shape != ():
        raise ContractError("param_gradient needs a scalar output")
    adj = tape.vjp(out, 1.0)
    g = adj[th.id]
    return np.zeros_like(theta) if g is None else g


def jacobian_product(fn, theta: np.ndarray, mode: str, vector: np.ndarray) -> np.ndarray:
    """J v ('jvp') or J^T v ('vjp') for the residual map ``fn(theta_var)``."""
    tape, th, out = trace(fn, theta)
    if mode == "jvp":
        tang = tape.jvp({th.id: vector})
        t = tang[out.id]
        return np.zeros(out.value.shape) if t is None else t
    if mode == "vjp":
        adj = tape.vjp(out, vector)
        g = adj[th.id]
        return np.zeros_like(theta) if g is None else g
    raise ContractError(f"mode must be 'jvp' or 'vjp', got {mode!r}")
