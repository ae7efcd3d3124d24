"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tape records one forward pass as an ordered list of nodes and replays
it backwards exactly once per backward() call. The value-level primitive
set is fixed: affine map (matrix product plus bias), embedding lookup,
elementwise nonlinearity, scaled-dot attention, GRU cell step, layer
normalization, fused softmax cross-entropy, and mean squared error.
Structural helpers (add, scale, concat, select, slice_axis, stack,
broadcast) only rearrange values; models are composed from these pieces
and nothing else.

Forward math lives in free functions so that tape ops and tape-free
inference paths share a single implementation.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5
MASKED_SCORE = -1e30


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    s = x - x.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def attention_forward(q, k, v, mask, n_heads):
    """Scaled-dot attention.

    q: (B, Lq, D), k/v: (B, Lk, D), mask: bool (B|1, Lq, Lk) with True
    meaning the query may attend to the key, or None for full attention.
    Returns (out (B, Lq, D), cache).
    """
    B, Lq, D = q.shape
    Lk = k.shape[1]
    if D % n_heads != 0:
        raise ValueError(f"model dim {D} not divisible by {n_heads} heads")
    dh = D // n_heads
    qh = q.reshape(B, Lq, n_heads, dh)
    kh = k.reshape(B, Lk, n_heads, dh)
    vh = v.reshape(B, Lk, n_heads, dh)
    scores = np.einsum("bqhd,bkhd->bhqk", qh, kh) / np.sqrt(dh)
    if mask is not None:
        scores = np.where(mask[:, None, :, :], scores, MASKED_SCORE)
    weights = softmax(scores)
    out = np.einsum("bhqk,bkhd->bqhd", weights, vh).reshape(B, Lq, D)
    return out, (qh, kh, vh, weights, dh)


def attention_backward(g, cache):
    qh, kh, vh, weights, dh = cache
    B, Lq, H, _ = qh.shape
    gh = g.reshape(B, Lq, H, dh)
    gw = np.einsum("bqhd,bkhd->bhqk", gh, vh)
    gv = np.einsum("bhqk,bqhd->bkhd", weights, gh)
    # softmax backward: rows of `weights` are distributions over keys.
    gs = weights * (gw - (weights * gw).sum(axis=-1, keepdims=True))
    gq = np.einsum("bhqk,bkhd->bqhd", gs, kh) / np.sqrt(dh)
    gk = np.einsum("bhqk,bqhd->bkhd", gs, qh) / np.sqrt(dh)
    D = H * dh
    return gq.reshape(B, Lq, D), gk.reshape(B, -1, D), gv.reshape(B, -1, D)


def layer_norm_forward(x, gain, bias):
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(g, gain, cache):
    xhat, inv = cache
    D = xhat.shape[-1]
    dgain = (g * xhat).reshape(-1, D).sum(axis=0)
    dbias = g.reshape(-1, D).sum(axis=0)
    dxhat = g * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def gru_forward(x, h, wz, bz, wr, br, wn, bn):
    """One GRU step. x: (B, Din), h: (B, H) -> new hidden (B, H)."""
    xh = np.concatenate([x, h], axis=1)
    z = sigmoid(xh @ wz + bz)
    r = sigmoid(xh @ wr + br)
    xrh = np.concatenate([x, r * h], axis=1)
    n = np.tanh(xrh @ wn + bn)
    out = (1.0 - z) * n + z * h
    return out, (xh, xrh, z, r, n)


def gru_backward(g, x, h, wz, wr, wn, cache):
    xh, xrh, z, r, n = cache
    din = x.shape[1]
    dn = g * (1.0 - z)
    dz = g * (h - n)
    dh = g * z
    dni = dn * (1.0 - n * n)
    dxrh = dni @ wn.T
    dwn = xrh.T @ dni
    dbn = dni.sum(axis=0)
    dx = dxrh[:, :din].copy()
    drh = dxrh[:, din:]
    dr = drh * h
    dh = dh + drh * r
    dri = dr * r * (1.0 - r)
    dzi = dz * z * (1.0 - z)
    dxh = dri @ wr.T + dzi @ wz.T
    dwr = xh.T @ dri
    dbr = dri.sum(axis=0)
    dwz = xh.T @ dzi
    dbz = dzi.sum(axis=0)
    dx += dxh[:, :din]
    dh = dh + dxh[:, din:]
    return dx, dh, dwz, dbz, dwr, dbr, dwn, dbn


def softmax_xent_forward(logits, targets, pad_mask=None):
    """Mean cross-entropy over non-padded positions.

    logits: (..., V) float, targets: (...) int, pad_mask: (...) bool with
    True marking padding (excluded from the mean). Returns (loss, cache).
    """
    lv = np.asarray(logits, dtype=np.float64)
    V = lv.shape[-1]
    flat = lv.reshape(-1, V)
    t = np.asarray(targets).reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise ValueError("targets do not match logits leading shape")
    if pad_mask is None:
        keep = np.ones(t.shape[0], dtype=bool)
    else:
        keep = ~np.asarray(pad_mask, dtype=bool).reshape(-1)
    if not keep.any():
        raise ValueError("empty target: all positions are padded")
    kept = t[keep]
    if (kept < 0).any() or (kept >= V).any():
        bad = kept[(kept < 0) | (kept >= V)][0]
        raise ValueError(f"target id {bad} out of range for vocab size {V}")
    logp = log_softmax(flat)
    nll = -logp[np.arange(t.shape[0]), np.where(keep, t, 0)]
    count = int(keep.sum())
    loss = float(nll[keep].sum() / count)
    return loss, (logp, t, keep, count, lv.shape)


def softmax_xent_backward(g, cache):
    logp, t, keep, count, shape = cache
    probs = np.exp(logp)
    probs[np.arange(t.shape[0]), np.where(keep, t, 0)] -= 1.0
    probs[~keep] = 0.0
    return (probs * (g / count)).reshape(shape)


class Node:
    """One tape entry: a float64 array plus its accumulated gradient."""

    __slots__ = ("value", "grad", "op")

    def __init__(self, value: np.ndarray, op: str):
        self.value = value
        self.grad = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Ordered record of one forward pass, consumed by backward()."""

    def __init__(self, check_finite: bool = False):
        self._steps: list[tuple[Node, object]] = []
        self._param_nodes: dict[str, Node] = {}
        self.check_finite = check_finite

    # ------------------------------------------------------------------
    # bookkeeping

    def _record(self, value, op, backward) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite values produced by op '{op}'")
        node = Node(value, op)
        self._steps.append((node, backward))
        return node

    def leaf(self, values, op: str = "leaf") -> Node:
        return self._record(np.asarray(values, dtype=np.float64), op, None)

    def param(self, store, name: str) -> Node:
        """Wrap a named parameter as a leaf, one node per name per tape."""
        node = self._param_nodes.get(name)
        if node is None:
            node = self._record(store[name], f"param:{name}", None)
            self._param_nodes[name] = node
        return node

    def param_grads(self, store) -> dict[str, np.ndarray]:
        """Gradients for every store parameter; zeros where unreachable."""
        out = {}
        for name in store.names():
            node = self._param_nodes.get(name)
            if node is None or node.grad is None:
                out[name] = np.zeros_like(store[name])
            else:
                out[name] = node.grad
        return out

    def backward(self, loss: Node) -> None:
        if not self._steps:
            raise RuntimeError("backward before forward: tape is empty")
        if loss.value.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        if not any(node is loss for node, _ in self._steps):
            raise RuntimeError("loss node was not recorded on this tape")
        for node, _ in self._steps:
            node.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for node, bw in reversed(self._steps):
            if bw is None or node.grad is None:
                continue
            for parent, g in bw(node.grad):
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += g

    def assert_finite(self) -> None:
        for node, _ in self._steps:
            if not np.all(np.isfinite(node.value)):
                raise FloatingPointError(f"non-finite value in op '{node.op}'")

    # ------------------------------------------------------------------
    # value primitives

    def affine(self, x: Node, w: Node, b: Node | None = None) -> Node:
        """x (..., Din) @ w (Din, Dout) + b (Dout)."""
        xv, wv = x.value, w.value
        if xv.shape[-1] != wv.shape[0]:
            raise ValueError(f"affine shape mismatch: {xv.shape} @ {wv.shape}")
        lead = xv.shape[:-1]
        x2 = xv.reshape(-1, xv.shape[-1])
        out = x2 @ wv
        if b is not None:
            out = out + b.value
        out = out.reshape(*lead, wv.shape[1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            grads = [(x, (g2 @ wv.T).reshape(xv.shape)), (w, x2.T @ g2)]
            if b is not None:
                grads.append((b, g2.sum(axis=0)))
            return grads

        return self._record(out, "affine", backward)

    def embedding(self, table: Node, ids) -> Node:
        """Row gather: table (V, D), ids int array of any shape -> (*ids.shape, D)."""
        ids = np.asarray(ids, dtype=np.int64)
        tv = table.value
        if ids.size and (ids.min() < 0 or ids.max() >= tv.shape[0]):
            raise ValueError(f"embedding id out of range for table of {tv.shape[0]} rows")
        out = tv[ids]

        def backward(g):
            gt = np.zeros_like(tv)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, tv.shape[1]))
            return [(table, gt)]

        return self._record(out, "embedding", backward)

    def nonlin(self, x: Node, kind: str) -> Node:
        xv = x.value
        if kind == "tanh":
            out = np.tanh(xv)
            dfn = lambda g: g * (1.0 - out * out)
        elif kind == "sigmoid":
            out = sigmoid(xv)
            dfn = lambda g: g * out * (1.0 - out)
        elif kind == "relu":
            out = np.maximum(xv, 0.0)
            dfn = lambda g: g * (xv > 0)
        else:
            raise ValueError(f"unknown nonlinearity '{kind}'")
        return self._record(out, kind, lambda g: [(x, dfn(g))])

    def attention(self, q: Node, k: Node, v: Node, mask, n_heads: int) -> Node:
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
        out, cache = attention_forward(q.value, k.value, v.value, mask, n_heads)

        def backward(g):
            gq, gk, gv = attention_backward(g, cache)
            return [(q, gq), (k, gk), (v, gv)]

        return self._record(out, "attention", backward)

    def gru_cell(self, x: Node, h: Node, wz: Node, bz: Node, wr: Node, br: Node,
                 wn: Node, bn: Node) -> Node:
        out, cache = gru_forward(x.value, h.value, wz.value, bz.value,
                                 wr.value, br.value, wn.value, bn.value)

        def backward(g):
            dx, dh, dwz, dbz, dwr, dbr, dwn, dbn = gru_backward(
                g, x.value, h.value, wz.value, wr.value, wn.value, cache)
            return [(x, dx), (h, dh), (wz, dwz), (bz, dbz),
                    (wr, dwr), (br, dbr), (wn, dwn), (bn, dbn)]

        return self._record(out, "gru_cell", backward)

    def layer_norm(self, x: Node, gain: Node, bias: Node) -> Node:
        out, cache = layer_norm_forward(x.value, gain.value, bias.value)

        def backward(g):
            dx, dgain, dbias = layer_norm_backward(g, gain.value, cache)
            return [(x, dx), (gain, dgain), (bias, dbias)]

        return self._record(out, "layer_norm", backward)

    def softmax_xent(self, logits: Node, targets, pad_mask=None) -> Node:
        loss, cache = softmax_xent_forward(logits.value, targets, pad_mask)

        def backward(g):
            return [(logits, softmax_xent_backward(g, cache))]

        return self._record(np.float64(loss), "softmax_xent", backward)

    def squared_error(self, pred: Node, target) -> Node:
        tv = np.asarray(target, dtype=np.float64)
        pv = pred.value
        if pv.shape != tv.shape:
            raise ValueError(f"squared_error shape mismatch: {pv.shape} vs {tv.shape}")
        if pv.size == 0:
            raise ValueError("squared_error on empty input")
        diff = (pv - tv).reshape(-1)
        loss = float(diff @ diff / diff.size)

        def backward(g):
            return [(pred, (2.0 / diff.size) * (pv - tv) * g)]

        return self._record(np.float64(loss), "squared_error", backward)

    # ------------------------------------------------------------------
    # structural helpers (no learned math)

    def add(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ValueError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
        return self._record(a.value + b.value, "add",
                            lambda g: [(a, g), (b, g)])

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._record(a.value * c, "scale", lambda g: [(a, g * c)])

    def concat(self, nodes: list[Node], axis: int) -> Node:
        values = [n.value for n in nodes]
        out = np.concatenate(values, axis=axis)
        sizes = [v.shape[axis] for v in values]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            grads = []
            for node, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.append((node, g[tuple(idx)]))
            return grads

        return self._record(out, "concat", backward)

    def select(self, x: Node, index: int, axis: int) -> Node:
        """Take one slice along an axis, dropping that axis."""
        out = np.take(x.value, index, axis=axis)

        def backward(g):
            gx = np.zeros_like(x.value)
            idx = [slice(None)] * x.value.ndim
            idx[axis] = index
            gx[tuple(idx)] = g
            return [(x, gx)]

        return self._record(out, "select", backward)

    def slice_axis(self, x: Node, start: int, stop: int, axis: int) -> Node:
        idx = [slice(None)] * x.value.ndim
        idx[axis] = slice(start, stop)
        idx = tuple(idx)
        out = x.value[idx]

        def backward(g):
            gx = np.zeros_like(x.value)
            gx[idx] = g
            return [(x, gx)]

        return self._record(out, "slice", backward)

    def stack(self, nodes: list[Node], axis: int) -> Node:
        out = np.stack([n.value for n in nodes], axis=axis)

        def backward(g):
            return [(node, np.take(g, j, axis=axis)) for j, node in enumerate(nodes)]

        return self._record(out, "stack", backward)

    def broadcast(self, x: Node, shape: tuple[int, ...]) -> Node:
        out = np.broadcast_to(x.value, shape)
        xshape = x.value.shape

        def backward(g):
            # Sum over axes introduced or widened by the broadcast.
            extra = g.ndim - len(xshape)
            gx = g.sum(axis=tuple(range(extra))) if extra else g
            reduce_axes = tuple(i for i, d in enumerate(xshape) if d == 1 and gx.shape[i] != 1)
            if reduce_axes:
                gx = gx.sum(axis=reduce_axes, keepdims=True)
            return [(x, gx)]

        return self._record(out.copy(), "broadcast", backward)
