"""Action encoders and effect decoders for stage 1.

Each network keeps its weights in a shared :class:`~arl.nn.ParamStore` under
its own prefix and exposes ``forward`` returning ``(output, cache)`` and
``backward(cache, dout, grads)``. Passing ``grads=None`` to a decoder skips
its weight gradients, which is how stage 2 trains through a frozen decoder.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .tensorize import EXIST, SUPPORT, X, Y, slot_width

# pairwise offsets are tiny next to one-hot features; this puts a typical
# placement offset on the same order as an attribute flag
REL_SCALE = 5.0
# the same boost for a slot's own features in the decoder readout, so slot-specific
# edits are not drowned by inputs every slot shares
SLOT_SCALE = 5.0


def _weight(store, rng, name, fan_in, fan_out, zero=False):
    store.add(name, np.zeros((fan_in, fan_out)) if zero else nn.glorot(rng, fan_in, fan_out))


class MLPEncoder:
    """Concatenate S and S' and run a dense stack down to the action vector."""

    def __init__(self, store, n_max, hidden, d_a, rng=None):
        self.store, self.n_max = store, n_max
        self.n_layers = len(hidden) + 1
        if rng is not None:
            dim = n_max * slot_width(n_max)
            nn.init_mlp(store, rng, "enc", [2 * dim] + list(hidden) + [d_a])

    def forward(self, s, sp):
        return nn.mlp_forward(self.store, "enc", np.concatenate([s, sp], axis=1), self.n_layers)

    def backward(self, cache, da, grads):
        nn.mlp_backward(self.store, "enc", cache, da, grads, need_input_grad=False)


class PairEncoder:
    """Relation network over slot pairs.

    Pools over pairs (i, j) where object i changed and j is any object, so
    the unchanged remainder of the scene does not leak into the action
    vector. Sees attributes before and after, per-object displacement and
    pairwise offsets, but neither absolute positions nor slot ids: the vector
    can only describe an edit relative to the objects involved.
    """

    N_SLOT = 36
    N_REL = 6

    def __init__(self, store, n_max, hidden, d_a, rng=None):
        self.store, self.n_max = store, n_max
        self.F = slot_width(n_max)
        self.n_head = len(hidden)
        if rng is not None:
            H = hidden[0]
            _weight(store, rng, "enc.pair.Wi", self.N_SLOT, H)
            _weight(store, rng, "enc.pair.Wj", self.N_SLOT, H)
            _weight(store, rng, "enc.pair.Wr", self.N_REL, H)
            store.add("enc.pair.b", np.zeros(H))
            nn.init_mlp(store, rng, "enc.head", list(hidden) + [d_a])

    def features(self, s, sp):
        N = self.n_max
        a = s.reshape(-1, N, self.F)
        b = sp.reshape(-1, N, self.F)
        ea, eb = a[:, :, EXIST], b[:, :, EXIST]
        both = (ea * eb)[:, :, None]
        f = np.concatenate([a[:, :, :X], b[:, :, :X], a[:, :, SUPPORT + N:SUPPORT + N + 1],
                            b[:, :, SUPPORT + N:SUPPORT + N + 1],
                            REL_SCALE * both * (b[:, :, X:Y + 1] - a[:, :, X:Y + 1])], axis=2)

        def offsets(t, e):
            m = e[:, :, None] * e[:, None, :]
            return [REL_SCALE * m * (t[:, :, None, c] - t[:, None, :, c]) for c in (X, Y)]

        rel = np.stack(offsets(b, eb) + offsets(a, ea)
                       + [b[:, :, SUPPORT:SUPPORT + N], a[:, :, SUPPORT:SUPPORT + N]], axis=3)
        present = np.maximum(ea, eb)
        changed = (np.abs(a - b).sum(axis=2) > 1e-9).astype(float)
        pm = changed[:, :, None] * present[:, None, :]
        return f, rel, pm / np.maximum(pm.sum(axis=(1, 2), keepdims=True), 1.0)

    def forward(self, s, sp):
        st = self.store
        f, rel, pm = self.features(s, sp)
        pre = ((f @ st["enc.pair.Wi"])[:, :, None] + (f @ st["enc.pair.Wj"])[:, None]
               + rel @ st["enc.pair.Wr"] + st["enc.pair.b"])
        h = np.tanh(pre)
        pooled = (h * pm[..., None]).sum(axis=(1, 2))
        a, hc = nn.mlp_forward(st, "enc.head", pooled, self.n_head)
        return a, (f, rel, pm, h, hc)

    def backward(self, cache, da, grads):
        f, rel, pm, h, hc = cache
        dp = nn.mlp_backward(self.store, "enc.head", hc, da, grads)
        dpre = dp[:, None, None, :] * pm[..., None] * (1.0 - h * h)
        H = h.shape[-1]
        nn._accumulate(grads, "enc.pair.Wi", f.reshape(-1, self.N_SLOT).T @ dpre.sum(axis=2).reshape(-1, H))
        nn._accumulate(grads, "enc.pair.Wj", f.reshape(-1, self.N_SLOT).T @ dpre.sum(axis=1).reshape(-1, H))
        nn._accumulate(grads, "enc.pair.Wr", rel.reshape(-1, self.N_REL).T @ dpre.reshape(-1, H))
        nn._accumulate(grads, "enc.pair.b", dpre.sum(axis=(0, 1, 2)))


class MLPDecoder:
    """Concatenate S and the action vector and run a dense stack to the scene logits."""

    def __init__(self, store, n_max, hidden, d_a, rng=None):
        self.store, self.n_max = store, n_max
        self.dim = n_max * slot_width(n_max)
        self.n_layers = len(hidden) + 1
        if rng is not None:
            nn.init_mlp(store, rng, "dec", [self.dim + d_a] + list(hidden) + [self.dim])

    def forward(self, s, a):
        return nn.mlp_forward(self.store, "dec", np.concatenate([s, a], axis=1), self.n_layers)

    def backward(self, cache, dout, grads):
        return nn.mlp_backward(self.store, "dec", cache, dout, grads)[:, self.dim:]


class AttentionDecoder:
    """One network shared by every slot, with attention over the scene's objects.

    Each slot embeds (its state, its slot id, the action), attends over the
    existing objects, and runs a hidden stack on the embedding, the attended
    summary, a scene-wide mean and its raw state. The readout has separate
    weights for a slot's deviation from the slot average and for the average
    itself; both start at zero so the untrained decoder predicts "no change".
    The attended slot id and position also feed the output through a direct
    linear path, so "next to" and "on top of" become copy operations.
    """

    def __init__(self, store, n_max, hidden, d_a, embed=256, key=64, rng=None):
        self.store, self.n_max = store, n_max
        self.F = slot_width(n_max)
        self.n_layers = len(hidden)
        self.pos = np.eye(n_max)
        if rng is not None:
            N, F = n_max, self.F
            _weight(store, rng, "dec.emb.W", F + N + d_a, embed)
            store.add("dec.emb.b", np.zeros(embed))
            _weight(store, rng, "dec.q", embed, key)
            _weight(store, rng, "dec.k", embed, key)
            nn.init_mlp(store, rng, "dec.hid", [3 * embed + N + 2 + F] + list(hidden))
            _weight(store, rng, "dec.out.Wc", hidden[-1], F, zero=True)
            _weight(store, rng, "dec.out.Wm", hidden[-1], F, zero=True)
            store.add("dec.out.b", np.zeros(F))
            _weight(store, rng, "dec.direct", N + 4, F, zero=True)

    def forward(self, s, a):
        st, N, F = self.store, self.n_max, self.F
        B = s.shape[0]
        s3 = s.reshape(B, N, F)
        pos = np.broadcast_to(self.pos, (B, N, N))
        xy = s3[:, :, X:Y + 1]
        u = np.concatenate([s3, pos, np.broadcast_to(a[:, None, :], (B, N, a.shape[1]))], axis=2)
        e = np.tanh(u @ st["dec.emb.W"] + st["dec.emb.b"])
        E = e.shape[-1]
        v = np.concatenate([e, pos, xy], axis=2)
        r, ac = nn.attention_forward(e @ st["dec.q"], e @ st["dec.k"], v, s3[:, :, EXIST])
        g = np.broadcast_to(e.mean(axis=1, keepdims=True), e.shape)
        hid_in = np.concatenate([e, r, g, SLOT_SCALE * s3], axis=2).reshape(B * N, -1)
        h, hc = nn.mlp_forward(st, "dec.hid", hid_in, self.n_layers)
        h = np.tanh(h).reshape(B, N, -1)
        hm = h.mean(axis=1, keepdims=True)
        hd = h - hm
        out = (hd @ st["dec.out.Wc"] + hm @ st["dec.out.Wm"] + st["dec.out.b"]).reshape(B * N, F)
        direct = np.concatenate([r[:, :, E:], xy], axis=2).reshape(B * N, -1)
        out = out + direct @ st["dec.direct"]
        return out.reshape(B, N * F), (u, e, ac, hc, direct, B, h, hd, hm)

    def backward(self, cache, dout, grads):
        st, N, F = self.store, self.n_max, self.F
        u, e, ac, hc, direct, B, h, hd, hm = cache
        E = e.shape[-1]
        dout = dout.reshape(B * N, F)
        if grads is not None:
            nn._accumulate(grads, "dec.direct", direct.T @ dout)
        ddirect = (dout @ st["dec.direct"].T).reshape(B, N, -1)
        d3 = dout.reshape(B, N, F)
        if grads is not None:
            nn._accumulate(grads, "dec.out.Wc", hd.reshape(B * N, -1).T @ dout)
            nn._accumulate(grads, "dec.out.Wm", hm[:, 0].T @ d3.sum(axis=1))
            nn._accumulate(grads, "dec.out.b", dout.sum(axis=0))
        dhd = d3 @ st["dec.out.Wc"].T
        dh = dhd - dhd.mean(axis=1, keepdims=True) + (d3.sum(axis=1, keepdims=True) @ st["dec.out.Wm"].T) / N
        dh = (dh * (1.0 - h * h)).reshape(B * N, -1)
        dhid = nn.mlp_backward(st, "dec.hid", hc, dh, grads).reshape(B, N, -1)
        dhid = dhid[:, :, :-F]
        de = dhid[:, :, :E] + dhid[:, :, -E:].sum(axis=1, keepdims=True) / N
        dr = dhid[:, :, E:-E].copy()
        dr[:, :, E:] += ddirect[:, :, :N + 2]
        dq, dk, dv = nn.attention_backward(ac, dr)
        de = de + dv[:, :, :E] + dq @ st["dec.q"].T + dk @ st["dec.k"].T
        dpre = de * (1.0 - e * e)
        if grads is not None:
            flat_e = e.reshape(-1, E)
            nn._accumulate(grads, "dec.q", flat_e.T @ dq.reshape(-1, dq.shape[-1]))
            nn._accumulate(grads, "dec.k", flat_e.T @ dk.reshape(-1, dk.shape[-1]))
            nn._accumulate(grads, "dec.emb.W", u.reshape(-1, u.shape[-1]).T @ dpre.reshape(-1, E))
            nn._accumulate(grads, "dec.emb.b", dpre.sum(axis=(0, 1)))
        du = dpre @ st["dec.emb.W"].T
        return du[:, :, F + N:].sum(axis=1)


ENCODERS = {"pair": PairEncoder, "mlp": MLPEncoder}
DECODERS = {"attn": AttentionDecoder, "mlp": MLPDecoder}
