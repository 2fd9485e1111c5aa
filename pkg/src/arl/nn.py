"""Hand-written reverse-mode kernels in float64: dense stacks, embeddings, LSTM, losses, Adam.

Every forward function returns ``(output, cache)``; the matching backward takes
the upstream gradient and the cache and returns input and parameter gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene import N_MAX
from .tensorize import EXIST, X, Y, categorical_groups, slot_width

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


# -- parameters & optimizer ------------------------------------------------------


@dataclass
class ParamStore:
    params: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    frozen: set = field(default_factory=set)

    def add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.m[name] = np.zeros_like(self.params[name])
        self.v[name] = np.zeros_like(self.params[name])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def freeze(self, prefix: str = "") -> None:
        self.frozen.update(self.names(prefix))

    def unfreeze(self, prefix: str = "") -> None:
        self.frozen.difference_update(self.names(prefix))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.m.items()},
                          {k: v.copy() for k, v in self.v.items()},
                          self.step, set(self.frozen))

    def fingerprint(self) -> bytes:
        return b"".join(n.encode() + self.params[n].tobytes() for n in sorted(self.params))


def adam_step(store: ParamStore, grads: dict, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every non-frozen parameter that has a gradient."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        if name in store.frozen:
            continue
        p = store.params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def save_checkpoint(path, store: ParamStore, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "step": store.step, "frozen": sorted(store.frozen),
            "shapes": {k: list(v.shape) for k, v in store.params.items()}, "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in store.params.items()}
    np.savez(Path(path), __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        store = ParamStore()
        for key in data.files:
            if key.startswith("param/"):
                store.add(key[len("param/"):], data[key])
    for k, shape in meta["shapes"].items():
        if list(store.params[k].shape) != shape:
            raise ShapeError(f"checkpoint tensor {k} has shape {store.params[k].shape}, header says {shape}")
    store.step = meta["step"]
    store.frozen = set(meta["frozen"])
    return store, meta.get("extra", {})


# -- layers ----------------------------------------------------------------------


def dense_forward(W, b, x):
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"dense: input {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W + b, x


def dense_backward(W, cache, dy):
    x = cache
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


def init_mlp(store: ParamStore, rng, prefix: str, sizes: list[int]) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        store.add(f"{prefix}.W{i}", glorot(rng, a, b))
        store.add(f"{prefix}.b{i}", np.zeros(b))


def mlp_forward(store: ParamStore, prefix: str, x, n_layers: int):
    """Affine layers with tanh between them; the last layer is linear."""
    caches = []
    h = x
    for i in range(n_layers):
        h, c = dense_forward(store[f"{prefix}.W{i}"], store[f"{prefix}.b{i}"], h)
        if i < n_layers - 1:
            h = np.tanh(h)
            caches.append((c, h))
        else:
            caches.append((c, None))
    return h, caches


def mlp_backward(store: ParamStore, prefix: str, caches, dy, grads: dict | None, need_input_grad: bool = True):
    """Backprop through ``mlp_forward``; ``grads=None`` skips parameter gradients (frozen stack)."""
    d = dy
    for i in reversed(range(len(caches))):
        c, act = caches[i]
        if act is not None:
            d = d * (1.0 - act * act)
        W = store[f"{prefix}.W{i}"]
        if grads is not None:
            dx, dW, db = dense_backward(W, c, d)
            _accumulate(grads, f"{prefix}.W{i}", dW)
            _accumulate(grads, f"{prefix}.b{i}", db)
        elif i > 0 or need_input_grad:
            dx = d @ W.T
        d = dx if (i > 0 or need_input_grad) else None
    return d


def _accumulate(grads: dict, name: str, g) -> None:
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


def embedding_forward(E, ids):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise IndexError(f"token id outside vocabulary of size {E.shape[0]}")
    return E[ids], ids


def embedding_backward(E, cache, dy):
    dE = np.zeros_like(E)
    np.add.at(dE, cache, dy)
    return dE


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(Wx, Wh, b, x, mask):
    """Run an LSTM over ``x`` of shape (B, T, D); masked steps carry the state through.

    Gate order in the 4H blocks: input, forget, cell candidate, output.
    Returns the final hidden state (B, H).
    """
    B, T, D = x.shape
    H = Wh.shape[0]
    if Wx.shape != (D, 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: x {x.shape}, Wx {Wx.shape}, Wh {Wh.shape}, b {b.shape}")
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    xw = x @ Wx + b  # (B, T, 4H)
    for t in range(T):
        z = xw[:, t] + h @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t:t + 1]
        steps.append((h, c, i, f, g, o, tc, m))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, (x, Wx, Wh, steps)


def lstm_backward(cache, dh):
    x, Wx, Wh, steps = cache
    B, T, D = x.shape
    H = Wh.shape[0]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dx = np.zeros_like(x)
    dc = np.zeros((B, H))
    dh = dh.copy()
    for t in reversed(range(T)):
        h_prev, c_prev, i, f, g, o, tc, m = steps[t]
        dh_new = dh * m
        dc_new = dc * m + dh_new * o * (1.0 - tc * tc)
        do = dh_new * tc
        di = dc_new * g
        dg = dc_new * i
        df = dc_new * c_prev
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
        dWh += h_prev.T @ dz
        dWx += x[:, t].T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ Wx.T
        dh = dz @ Wh.T + dh * (1.0 - m)
        dc = dc_new * f + dc * (1.0 - m)
    return dx, dWx, dWh, db


def attention_forward(q, k, v, key_mask):
    """Scaled dot-product attention over slots.

    ``q``, ``k``: (B, N, d); ``v``: (B, N, dv); ``key_mask``: (B, N), 1 for
    attendable slots. Every row needs at least one attendable key.
    """
    d = q.shape[-1]
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d)
    scores = np.where(key_mask[:, None, :] > 0.5, scores, -1e30)
    alpha = softmax(scores, axis=-1)
    return alpha @ v, (q, k, v, alpha)


def attention_backward(cache, dout):
    q, k, v, alpha = cache
    scale = 1.0 / np.sqrt(q.shape[-1])
    dalpha = dout @ v.transpose(0, 2, 1)
    dv = alpha.transpose(0, 2, 1) @ dout
    ds = alpha * (dalpha - (dalpha * alpha).sum(axis=-1, keepdims=True)) * scale
    return ds @ k, ds.transpose(0, 2, 1) @ q, dv


# -- losses ----------------------------------------------------------------------


def log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(z, axis=-1):
    return np.exp(log_softmax(z, axis))


def softmax_ce(logits, target, mask=None):
    """Summed -log softmax(logits)[target] over rows (optionally masked); returns (loss, dlogits)."""
    logits = np.asarray(logits, dtype=float)
    target = np.asarray(target)
    if logits.ndim == 1:
        loss, d = softmax_ce(logits[None], np.atleast_1d(target), None if mask is None else np.atleast_1d(mask))
        return loss, d[0]
    if target.min() < 0 or target.max() >= logits.shape[-1]:
        raise ValueError("target index outside the class range")
    lp = log_softmax(logits)
    rows = np.arange(len(target))
    m = np.ones(len(target)) if mask is None else np.asarray(mask, dtype=float)
    loss = -(lp[rows, target] * m).sum()
    d = np.exp(lp)
    d[rows, target] -= 1.0
    return loss, d * m[:, None]


def bce(score, target, mask=None):
    """Binary cross-entropy on pre-sigmoid scores, summed; returns (loss, dscore)."""
    s = np.asarray(score, dtype=float)
    t = np.asarray(target, dtype=float)
    if np.any((t != 0) & (t != 1)):
        raise ValueError("bce targets must be 0 or 1")
    m = np.ones_like(s) if mask is None else np.asarray(mask, dtype=float)
    # softplus(s) - t*s, computed stably
    loss = np.logaddexp(0.0, s) - t * s
    return float((loss * m).sum()), (_sigmoid(s) - t) * m


def mse(pred, target, mask=None):
    """Summed squared error; returns (loss, dpred)."""
    diff = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    m = np.ones_like(diff) if mask is None else np.asarray(mask, dtype=float)
    return float((diff * diff * m).sum()), 2.0 * diff * m


def scene_loss(logits, target, n_max: int = N_MAX, coord_weight: float = 1.0):
    """Factorised negative log-likelihood of target scenes, averaged over the batch.

    Categorical cross-entropy per attribute/support group and Bernoulli
    existence per slot; squared error on coordinates. Group and coordinate
    terms only count for slots present in the target.
    """
    logits = np.atleast_2d(logits)
    target = np.atleast_2d(target)
    B = logits.shape[0]
    F = slot_width(n_max)
    z = logits.reshape(B, n_max, F)
    t = target.reshape(B, n_max, F)
    d = np.zeros_like(z)
    present = t[:, :, EXIST]
    loss, d[:, :, EXIST] = bce(z[:, :, EXIST], present)
    for _, a, b in categorical_groups(n_max):
        zz = z[:, :, a:b].reshape(-1, b - a)
        tt = t[:, :, a:b].reshape(-1, b - a)
        l, dz = softmax_ce(zz, tt.argmax(axis=1), present.reshape(-1))
        loss += l
        d[:, :, a:b] = dz.reshape(B, n_max, b - a)
    l, dc = mse(z[:, :, X:Y + 1], t[:, :, X:Y + 1], np.repeat(present[:, :, None], 2, axis=2))
    loss += coord_weight * l
    d[:, :, X:Y + 1] = coord_weight * dc
    return loss / B, d.reshape(B, -1) / B


# -- gradient checking -------------------------------------------------------------


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    return float(abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))


def grad_check(fn, params: dict, h: float = 1e-4, n_coords: int = 50, seed: int = 0,
               floor: float = 1e-6, names=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn()`` must return ``(loss, grads)`` evaluated at the current contents of
    ``params`` (arrays are perturbed in place and restored). At least
    ``n_coords`` random coordinates per tensor are probed, or all of them.
    """
    rng = np.random.default_rng(seed)
    _, grads = fn()
    worst = 0.0
    for name in (names or list(params)):
        p = params[name]
        flat = p.reshape(-1)
        k = flat.size
        idx = np.arange(k) if k <= n_coords else rng.choice(k, size=n_coords, replace=False)
        g = grads.get(name)
        g = np.zeros_like(p).reshape(-1) if g is None else np.asarray(g).reshape(-1)
        for j in idx:
            old = flat[j]
            flat[j] = old + h
            lp, _ = fn()
            flat[j] = old - h
            lm, _ = fn()
            flat[j] = old
            num = (lp - lm) / (2 * h)
            worst = max(worst, relative_error(g[j], num, floor))
    return worst
