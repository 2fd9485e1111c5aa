"""Small differentiable set-ups for finite-difference checks.

Each factory returns ``(fn, params)`` where ``fn()`` gives ``(loss, grads)``
at the current contents of ``params``.
"""

import numpy as np

from arl import nn
from arl.models import AttentionDecoder
from arl.pipeline import NL2ActionRep, Stage1Model, TrainConfig, stage2_loss_and_grads
from arl.tensorize import encode_batch
from conftest import obj, scene


def _rng(seed=0):
    return np.random.default_rng(seed)


def dense():
    r = _rng(1)
    p = {"W": r.normal(size=(4, 3)), "b": r.normal(size=3), "x": r.normal(size=(5, 4))}
    R = r.normal(size=(5, 3))

    def fn():
        y, c = nn.dense_forward(p["W"], p["b"], p["x"])
        dx, dW, db = nn.dense_backward(p["W"], c, R)
        return float((y * R).sum()), {"W": dW, "b": db, "x": dx}
    return fn, p


def mlp():
    r = _rng(2)
    store = nn.ParamStore()
    nn.init_mlp(store, r, "m", [4, 6, 5, 3])
    x = r.normal(size=(5, 4))
    R = r.normal(size=(5, 3))
    p = dict(store.params, x=x)

    def fn():
        y, c = nn.mlp_forward(store, "m", p["x"], 3)
        g = {}
        dx = nn.mlp_backward(store, "m", c, R, g)
        g["x"] = dx
        return float((y * R).sum()), g
    return fn, p


def embedding():
    r = _rng(3)
    p = {"E": r.normal(size=(6, 4))}
    ids = np.array([[1, 2, 2], [5, 0, 3]])
    R = r.normal(size=(2, 3, 4))

    def fn():
        y, c = nn.embedding_forward(p["E"], ids)
        return float((y * R).sum()), {"E": nn.embedding_backward(p["E"], c, R)}
    return fn, p


def lstm():
    """Three real tokens and one PAD position."""
    r = _rng(4)
    D, H = 3, 5
    p = {"Wx": r.normal(scale=0.5, size=(D, 4 * H)), "Wh": r.normal(scale=0.5, size=(H, 4 * H)),
         "b": r.normal(scale=0.5, size=4 * H), "x": r.normal(size=(2, 4, D))}
    mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=float)
    R = r.normal(size=(2, H))

    def fn():
        h, c = nn.lstm_forward(p["Wx"], p["Wh"], p["b"], p["x"], mask)
        dx, dWx, dWh, db = nn.lstm_backward(c, R)
        return float((h * R).sum()), {"Wx": dWx, "Wh": dWh, "b": db, "x": dx}
    return fn, p


def attention():
    r = _rng(5)
    p = {"q": r.normal(size=(2, 4, 3)), "k": r.normal(size=(2, 4, 3)), "v": r.normal(size=(2, 4, 6))}
    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0]], dtype=float)
    R = r.normal(size=(2, 4, 6))

    def fn():
        y, c = nn.attention_forward(p["q"], p["k"], p["v"], mask)
        dq, dk, dv = nn.attention_backward(c, R)
        return float((y * R).sum()), {"q": dq, "k": dk, "v": dv}
    return fn, p


def softmax_ce():
    r = _rng(6)
    p = {"z": r.normal(size=(5, 4))}
    t = np.array([0, 3, 1, 1, 2])
    m = np.array([1, 1, 0, 1, 1.0])

    def fn():
        loss, d = nn.softmax_ce(p["z"], t, m)
        return loss, {"z": d}
    return fn, p


def bce():
    r = _rng(7)
    p = {"s": r.normal(size=7)}
    t = (r.random(7) > 0.5).astype(float)

    def fn():
        loss, d = nn.bce(p["s"], t)
        return loss, {"s": d}
    return fn, p


def mse():
    r = _rng(8)
    p = {"y": r.normal(size=(3, 2))}
    t = r.normal(size=(3, 2))

    def fn():
        loss, d = nn.mse(p["y"], t)
        return loss, {"y": d}
    return fn, p


def _pair():
    s = scene(obj(0, x=0.2, y=0.3), obj(1, color="blue", shape="sphere", size="small", x=0.7, y=0.6))
    sp = scene(obj(0, color="cyan", x=0.2, y=0.3), obj(1, color="blue", shape="sphere", size="small", x=0.2,
                                                         y=0.3, support=0))
    s2 = scene(obj(0, x=0.5, y=0.5), obj(1, color="green", x=0.2, y=0.8), obj(2, shape="cylinder", x=0.8, y=0.2))
    sp2 = scene(obj(0, x=0.5, y=0.5), obj(2, shape="cylinder", x=0.8, y=0.2))
    return encode_batch([s, s2]), encode_batch([sp, sp2])


def scene_loss():
    s, sp = _pair()
    p = {"z": _rng(9).normal(size=sp.shape)}

    def fn():
        loss, d = nn.scene_loss(p["z"], sp, coord_weight=2.0)
        return loss, {"z": d}
    return fn, p


def tiny_config(encoder="pair", decoder="attn", **kw):
    return TrainConfig(d_a=6, encoder_hidden=(8, 7), decoder_hidden=(9, 8), encoder=encoder, decoder=decoder,
                       emb_dim=4, lstm_hidden=5, max_len=6, **kw)


def _perturb(store, seed, scale=0.3):
    r = _rng(seed)
    for k in store.params:
        store[k][...] += r.normal(0, scale, store[k].shape)


def tiny_stage1(encoder="pair", decoder="attn"):
    cfg = tiny_config(encoder, decoder)
    m = Stage1Model(cfg)
    if decoder == "attn":
        for k in m.store.names("dec"):
            del m.store.params[k]
        m.decoder = AttentionDecoder(m.store, cfg.n_max, cfg.decoder_hidden, cfg.d_a, embed=7, key=5, rng=_rng(10))
    _perturb(m.store, 11)
    return m, cfg


def stage1_loss(encoder="pair", decoder="attn"):
    m, _ = tiny_stage1(encoder, decoder)
    s, sp = _pair()
    return (lambda: m.loss_and_grads(s, sp)), m.store.params


def stage2_loss(decoder="attn", cotrain=False, regress=0.0):
    m, cfg = tiny_stage1("pair", decoder)
    cfg = tiny_config("pair", decoder, stage2_regress=regress)
    nl = NL2ActionRep(cfg, 9)
    _perturb(nl.store, 12)
    s, sp = _pair()
    ids = np.array([[3, 4, 5, 0, 0, 0], [2, 8, 1, 7, 6, 0]])
    target = _rng(13).normal(size=(2, cfg.d_a)) if regress else None
    params = dict(nl.store.params)
    if cotrain:
        params.update({k: v for k, v in m.store.params.items() if k.startswith("dec")})
    return (lambda: stage2_loss_and_grads(m, nl, s, sp, ids, cfg, target, decoder_grads=cotrain)), params


OPS = {
    "dense": dense, "mlp": mlp, "embedding": embedding, "lstm": lstm, "attention": attention,
    "softmax_ce": softmax_ce, "bce": bce, "mse": mse, "scene_loss": scene_loss,
}
LOSSES = {
    "stage1 pair/attn": lambda: stage1_loss("pair", "attn"),
    "stage1 mlp/mlp": lambda: stage1_loss("mlp", "mlp"),
    "stage2 frozen decoder": lambda: stage2_loss(),
    "stage2 co-trained decoder": lambda: stage2_loss(cotrain=True),
    "stage2 with regression": lambda: stage2_loss(regress=0.5),
    "stage2 mlp decoder": lambda: stage2_loss("mlp"),
}
