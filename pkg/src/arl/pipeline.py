"""Three-stage action representation learner.

Stage 1 trains an action encoder on (S, S') pairs jointly with an effect decoder
that rebuilds S' from S and the action vector. Stage 2 freezes both and trains
a text encoder whose output drives the frozen decoder. Stage 3 runs the exact
question executor on the predicted post-action scene.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from .datagen import EpisodeRecord, Vocab
from .models import DECODERS, ENCODERS
from .questions import QuestionError, execute_question
from .scene import N_MAX, SceneGraph, scenes_equivalent
from .tensorize import EXIST, X, Y, discretize, encode_batch, slot_width

log = logging.getLogger(__name__)

NO_ANSWER = "<no-answer>"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d_a: int = 125
    stage1_pairs: int = 20_000
    stage2_episodes: int | None = None
    encoder_hidden: tuple = (256, 256)
    decoder_hidden: tuple = (256, 256)
    encoder: str = "pair"  # "pair": relation network over slot pairs; "mlp": concat MLP
    decoder: str = "attn"  # "attn": slot-shared network with attention over objects; "mlp": concat MLP
    skip_margin: float = 5.0
    emb_dim: int = 64
    lstm_hidden: int = 200
    max_len: int = 20
    epochs1: int = 30
    epochs2: int = 50
    patience: int = 10
    holdout: float = 0.1
    batch_size: int = 64
    lr: float = 1e-3
    stage1_lr_decay: float = 0.93  # per-epoch multiplier on the stage-1 learning rate
    stage2_lr: float | None = 3e-3  # None: same as lr
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    coord_weight: float = 100.0
    action_noise: float = 0.0
    stage2_cotrain: bool = False
    stage2_regress: float = 0.0
    n_max: int = N_MAX
    seed: int = 0

    def __post_init__(self):
        if self.d_a < 1:
            raise ValueError("d_a must be at least 1")
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training options {unknown}")
        return cls(**d)


# -- stage 1 -----------------------------------------------------------------------


class Stage1Model:
    """Action encoder and effect decoder sharing one parameter store (``enc.*``, ``dec.*``).

    The decoder predicts a correction on top of a fixed skip path that
    reproduces S, so an all-zero correction means "nothing changed".
    """

    def __init__(self, config: TrainConfig, store: nn.ParamStore | None = None):
        self.config = config
        self.n_max = config.n_max
        self.F = slot_width(config.n_max)
        self.scene_dim = self.n_max * self.F
        rng = None
        if store is None:
            store = nn.ParamStore()
            rng = np.random.default_rng([config.seed, 1])
        self.store = store
        self.encoder = ENCODERS[config.encoder](store, self.n_max, config.encoder_hidden, config.d_a, rng=rng)
        self.decoder = DECODERS[config.decoder](store, self.n_max, config.decoder_hidden, config.d_a, rng=rng)

    @property
    def store(self):
        return self._store

    @store.setter
    def store(self, value):
        self._store = value
        for net in (getattr(self, "encoder", None), getattr(self, "decoder", None)):
            if net is not None:
                net.store = value

    def encode(self, s, sp):
        return self.encoder.forward(s, sp)

    def encode_backward(self, cache, da, grads):
        self.encoder.backward(cache, da, grads)

    def skip(self, s):
        """Logits that reproduce ``s`` unchanged."""
        t = s.reshape(-1, self.n_max, self.F)
        m = self.config.skip_margin
        out = np.where(t > 0.5, m, 0.0)
        out[:, :, EXIST] = np.where(t[:, :, EXIST] > 0.5, m, -m)
        out[:, :, X:Y + 1] = t[:, :, X:Y + 1]
        return out.reshape(s.shape)

    def decode(self, s, a):
        out, cache = self.decoder.forward(s, a)
        return out + self.skip(s), cache

    def decode_backward(self, cache, dlogits, grads):
        """Returns the gradient w.r.t. the action vector; ``grads=None`` leaves decoder weights alone."""
        return self.decoder.backward(cache, dlogits, grads)

    def loss_and_grads(self, s, sp, rng=None):
        """Scene loss and gradients; with ``rng`` the action vector is jittered by ``action_noise``."""
        c = self.config
        a, ec = self.encode(s, sp)
        if rng is not None and c.action_noise > 0:
            a = a + rng.normal(0.0, c.action_noise, size=a.shape)
        logits, dc = self.decode(s, a)
        loss, dlog = nn.scene_loss(logits, sp, self.n_max, c.coord_weight)
        grads = {}
        da = self.decode_backward(dc, dlog, grads)
        self.encode_backward(ec, da, grads)
        return loss, grads

    def reconstruct(self, s, sp):
        a, _ = self.encode(s, sp)
        return self.decode(s, a)[0]


def encode_action_pair(model: Stage1Model, s: SceneGraph, sp: SceneGraph) -> np.ndarray:
    a, _ = model.encode(encode_batch([s]), encode_batch([sp]))
    return a[0]


def balanced_pairs(episodes, budget: int, seed: int = 0) -> list[tuple[SceneGraph, SceneGraph, str]]:
    """Sample ``budget`` (S, S', kind) triples without replacement, split evenly over action kinds."""
    by_kind: dict[str, list] = {}
    for ep in episodes:
        by_kind.setdefault(ep.action_type, []).append(ep)
    kinds = sorted(by_kind)
    if not kinds:
        raise TrainingError("no episodes to draw pairs from")
    rng = np.random.default_rng([seed, 7])
    per, extra = divmod(budget, len(kinds))
    out = []
    for i, k in enumerate(kinds):
        want = per + (1 if i < extra else 0)
        pool = by_kind[k]
        if want > len(pool):
            raise TrainingError(f"budget needs {want} {k} pairs, only {len(pool)} available")
        for j in rng.choice(len(pool), size=want, replace=False):
            out.append((pool[j].scene, pool[j].post_scene, k))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def _batches(n: int, size: int, rng):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i:i + size]


def _check_finite(loss: float, stage: str, epoch: int) -> None:
    if not math.isfinite(loss):
        raise TrainingError(f"{stage}: non-finite loss at epoch {epoch}")


def scene_accuracy(predicted, oracle) -> float:
    if not oracle:
        return 0.0
    return 100.0 * sum(scenes_equivalent(p, o) for p, o in zip(predicted, oracle)) / len(oracle)


def train_stage1(pairs, config: TrainConfig, progress=None):
    """Fit encoder and decoder on (S, S') pairs; early-stops on held-out scene exact-match.

    Returns ``(model, metrics)`` where metrics hold per-epoch losses and the
    held-out scene exact-match after discretisation.
    """
    if not pairs:
        raise TrainingError("stage 1: empty dataset")
    s_all = encode_batch([p[0] for p in pairs])
    sp_all = encode_batch([p[1] for p in pairs])
    n = len(pairs)
    n_hold = max(1, int(round(n * config.holdout))) if n > 1 else 0
    n_train = n - n_hold
    model = Stage1Model(config)
    rng = np.random.default_rng([config.seed, 2])
    noise_rng = np.random.default_rng([config.seed, 5])
    hold_targets = [pairs[i][1] for i in range(n_train, n)]
    best = ((-math.inf, -math.inf), model.store.copy(), 0)
    train_losses, hold_losses, hold_accs = [], [], []
    stale = 0
    for epoch in range(config.epochs1):
        lr = config.lr * config.stage1_lr_decay ** epoch
        total = 0.0
        for idx in _batches(n_train, config.batch_size, rng):
            loss, grads = model.loss_and_grads(s_all[idx], sp_all[idx], noise_rng)
            _check_finite(loss, "stage 1", epoch)
            nn.adam_step(model.store, grads, lr, config.beta1, config.beta2, config.eps)
            total += loss * len(idx)
        train_losses.append(total / n_train)
        if n_hold:
            hl, ha = _eval_split(lambda i: model.reconstruct(s_all[i], sp_all[i]), sp_all, hold_targets,
                                 n_train, n, config)
        else:
            hl, ha = train_losses[-1], 0.0
        hold_losses.append(hl)
        hold_accs.append(ha)
        if progress:
            progress(f"stage1 epoch {epoch} train {train_losses[-1]:.4f} held-out {hl:.4f} acc {ha:.1f}")
        if _improved((ha, -hl), best[0]):
            best = ((ha, -hl), model.store.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.store = best[1]
    if n_hold:
        accuracy = best[0][0]
    else:
        preds = [discretize(row, model.n_max) for row in model.reconstruct(s_all, sp_all)]
        accuracy = scene_accuracy(preds, [p[1] for p in pairs])
    metrics = {
        "train_loss": train_losses,
        "heldout_loss": hold_losses,
        "heldout_accuracy": hold_accs,
        "best_epoch": best[2],
        "pairs": n,
        "heldout_scene_accuracy": accuracy,
    }
    return model, metrics


def _improved(key, best) -> bool:
    """Higher exact-match wins; equal exact-match falls back to lower loss."""
    return key[0] > best[0] or (key[0] == best[0] and key[1] > best[1] + 1e-6)


def _eval_split(logits_fn, targets, scenes, start, stop, config, size=256):
    """Mean scene loss and scene exact-match (percent) over rows ``start:stop``."""
    total, hits = 0.0, 0
    for i in range(start, stop, size):
        idx = np.arange(i, min(stop, i + size))
        logits = logits_fn(idx)
        total += nn.scene_loss(logits, targets[idx], config.n_max, config.coord_weight)[0] * len(idx)
        hits += sum(scenes_equivalent(discretize(row, config.n_max), scenes[j - start])
                    for row, j in zip(logits, idx))
    n = stop - start
    return total / n, 100.0 * hits / n


# -- stage 2 -----------------------------------------------------------------------


class NL2ActionRep:
    """Embedding -> LSTM -> linear head producing an action vector from token ids."""

    def __init__(self, config: TrainConfig, vocab_size: int, store: nn.ParamStore | None = None):
        self.config = config
        self.vocab_size = vocab_size
        if store is None:
            rng = np.random.default_rng([config.seed, 3])
            store = nn.ParamStore()
            E = rng.normal(0.0, 0.1, size=(vocab_size, config.emb_dim))
            E[0] = 0.0
            store.add("nl.emb", E)
            H = config.lstm_hidden
            store.add("nl.lstm.Wx", nn.glorot(rng, config.emb_dim, 4 * H))
            store.add("nl.lstm.Wh", nn.glorot(rng, H, 4 * H))
            b = np.zeros(4 * H)
            b[H:2 * H] = 1.0
            store.add("nl.lstm.b", b)
            nn.init_mlp(store, rng, "nl.head", [H, config.d_a])
        self.store = store

    def forward(self, ids):
        ids = np.asarray(ids)
        emb, ec = nn.embedding_forward(self.store["nl.emb"], ids)
        mask = (ids != 0).astype(float)
        h, lc = nn.lstm_forward(self.store["nl.lstm.Wx"], self.store["nl.lstm.Wh"], self.store["nl.lstm.b"],
                                emb, mask)
        a, hc = nn.mlp_forward(self.store, "nl.head", h, 1)
        return a, (ec, lc, hc)

    def backward(self, cache, da, grads):
        ec, lc, hc = cache
        dh = nn.mlp_backward(self.store, "nl.head", hc, da, grads)
        dx, dWx, dWh, db = nn.lstm_backward(lc, dh)
        nn._accumulate(grads, "nl.lstm.Wx", dWx)
        nn._accumulate(grads, "nl.lstm.Wh", dWh)
        nn._accumulate(grads, "nl.lstm.b", db)
        nn._accumulate(grads, "nl.emb", nn.embedding_backward(self.store["nl.emb"], ec, dx))

    def __call__(self, ids):
        return self.forward(ids)[0]


def encode_texts(vocab: Vocab, texts, max_len: int) -> np.ndarray:
    return np.array([vocab.encode(t, max_len) for t in texts], dtype=np.int64)


def stage2_loss_and_grads(stage1: Stage1Model, nl: NL2ActionRep, s, sp, ids, config: TrainConfig,
                          target_a=None, decoder_grads: bool = False):
    a, cache = nl.forward(ids)
    logits, dc = stage1.decode(s, a)
    loss, dlog = nn.scene_loss(logits, sp, stage1.n_max, config.coord_weight)
    grads: dict = {}
    da = stage1.decode_backward(dc, dlog, grads if decoder_grads else None)
    if target_a is not None and config.stage2_regress > 0:
        diff = a - target_a
        B = a.shape[0]
        loss += config.stage2_regress * float((diff * diff).sum()) / B
        da = da + config.stage2_regress * 2.0 * diff / B
    nl.backward(cache, da, grads)
    return loss, grads


def train_stage2(episodes, stage1: Stage1Model, vocab: Vocab, config: TrainConfig, val_episodes=None,
                 progress=None):
    """Train the text encoder through the frozen decoder; early-stops on ``val_episodes`` scene exact-match.

    With ``config.stage2_cotrain`` the decoder is updated too (ablation variant).
    """
    if not episodes:
        raise TrainingError("stage 2: empty dataset")
    if config.stage2_cotrain:
        stage1.store.unfreeze("dec")
    else:
        stage1.store.freeze()
    nl = NL2ActionRep(config, len(vocab))
    s_all = encode_batch([e.scene for e in episodes])
    sp_all = encode_batch([e.post_scene for e in episodes])
    ids_all = encode_texts(vocab, [e.action_text for e in episodes], config.max_len)
    target_all = None
    if config.stage2_regress > 0:
        target_all = stage1.encode(s_all, sp_all)[0]
    if val_episodes:
        vs = encode_batch([e.scene for e in val_episodes])
        vsp = encode_batch([e.post_scene for e in val_episodes])
        vids = encode_texts(vocab, [e.action_text for e in val_episodes], config.max_len)
        val_scenes = [e.post_scene for e in val_episodes]
    rng = np.random.default_rng([config.seed, 4])
    lr = config.lr if config.stage2_lr is None else config.stage2_lr
    best = ((-math.inf, -math.inf), nl.store.copy(), stage1.store.copy() if config.stage2_cotrain else None, 0)
    train_losses, val_losses, val_accs = [], [], []
    stale = 0
    n = len(episodes)
    for epoch in range(config.epochs2):
        total = 0.0
        for idx in _batches(n, config.batch_size, rng):
            loss, grads = stage2_loss_and_grads(stage1, nl, s_all[idx], sp_all[idx], ids_all[idx], config,
                                                None if target_all is None else target_all[idx],
                                                decoder_grads=config.stage2_cotrain)
            _check_finite(loss, "stage 2", epoch)
            nl_grads = {k: v for k, v in grads.items() if k.startswith("nl.")}
            nn.adam_step(nl.store, nl_grads, lr, config.beta1, config.beta2, config.eps)
            if config.stage2_cotrain:
                dec_grads = {k: v for k, v in grads.items() if k.startswith("dec.")}
                nn.adam_step(stage1.store, dec_grads, lr, config.beta1, config.beta2, config.eps)
            total += loss * len(idx)
        train_losses.append(total / n)
        if val_episodes:
            vl, va = _eval_split(lambda i: stage1.decode(vs[i], nl(vids[i]))[0], vsp, val_scenes, 0,
                                 len(val_episodes), config)
        else:
            vl, va = train_losses[-1], 0.0
        val_losses.append(vl)
        val_accs.append(va)
        if progress:
            progress(f"stage2 epoch {epoch} train {train_losses[-1]:.4f} val {vl:.4f} acc {va:.1f}")
        if _improved((va, -vl), best[0]):
            best = ((va, -vl), nl.store.copy(), stage1.store.copy() if config.stage2_cotrain else None, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    nl.store = best[1]
    if config.stage2_cotrain:
        stage1.store = best[2]
    return nl, {"train_loss": train_losses, "val_loss": val_losses, "val_accuracy": val_accs,
                "best_epoch": best[3], "episodes": n}


# -- stage 3 -----------------------------------------------------------------------


@dataclass
class Pipeline:
    stage1: Stage1Model
    nl: NL2ActionRep
    vocab: Vocab
    config: TrainConfig = field(default_factory=TrainConfig)

    def action_vectors(self, texts) -> np.ndarray:
        return self.nl(encode_texts(self.vocab, texts, self.config.max_len))

    def predict_logits(self, scenes, texts) -> np.ndarray:
        s = encode_batch(scenes)
        return self.stage1.decode(s, self.action_vectors(texts))[0]

    def predict_post_scenes(self, scenes, texts, batch: int = 256) -> list[SceneGraph]:
        out = []
        for i in range(0, len(scenes), batch):
            logits = self.predict_logits(scenes[i:i + batch], texts[i:i + batch])
            out.extend(discretize(row, self.stage1.n_max) for row in logits)
        return out

    def predict_episodes(self, episodes) -> list[SceneGraph]:
        return self.predict_post_scenes([e.scene for e in episodes], [e.action_text for e in episodes])


def save_pipeline(pipeline: Pipeline, out_dir) -> None:
    """Write ``stage1.npz`` and ``stage2.npz`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_stage1(out / "stage1.npz", pipeline.stage1)
    nn.save_checkpoint(out / "stage2.npz", pipeline.nl.store,
                       {"config": pipeline.config.to_dict(), "vocab": pipeline.vocab.to_list()})


def save_stage1(path, model: Stage1Model) -> None:
    nn.save_checkpoint(path, model.store, {"config": model.config.to_dict()})


def load_stage1(path) -> Stage1Model:
    store, extra = nn.load_checkpoint(path)
    return Stage1Model(TrainConfig.from_dict(extra["config"]), store)


def load_pipeline(model_dir) -> Pipeline:
    d = Path(model_dir)
    stage1 = load_stage1(d / "stage1.npz")
    store, extra = nn.load_checkpoint(d / "stage2.npz")
    config = TrainConfig.from_dict(extra["config"])
    vocab = Vocab.from_list(extra["vocab"])
    return Pipeline(stage1, NL2ActionRep(config, len(vocab), store), vocab, config)


def predict_post_scene(pipeline: Pipeline, scene: SceneGraph, action_text: str) -> SceneGraph:
    return pipeline.predict_post_scenes([scene], [action_text])[0]


def safe_answer(scene: SceneGraph, program) -> str:
    """Executor answer, or NO_ANSWER when the predicted scene breaks the program (e.g. unique())."""
    try:
        return execute_question(scene, program)
    except QuestionError:
        return NO_ANSWER


def answer_hypothetical(pipeline: Pipeline, scene: SceneGraph, action_text: str, question_program) -> str:
    return safe_answer(predict_post_scene(pipeline, scene, action_text), question_program)


def dump_action_embeddings(pipeline: Pipeline, episodes: list[EpisodeRecord], path=None) -> list[list]:
    """Rows of (episode id, action type, d_a values); written as CSV when ``path`` is given."""
    vecs = pipeline.action_vectors([e.action_text for e in episodes])
    rows = [[e.id, e.action_type, *(float(v) for v in vec)] for e, vec in zip(episodes, vecs)]
    if path is not None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "action_type"] + [f"a{i}" for i in range(vecs.shape[1])])
            for r in rows:
                w.writerow([r[0], r[1]] + [repr(v) for v in r[2:]])
    return rows


def cosine_separation(vectors: np.ndarray, labels) -> tuple[float, float]:
    """Mean pairwise cosine similarity within and across labels."""
    v = np.asarray(vectors, dtype=float)
    v = v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    sim = v @ v.T
    lab = np.asarray(labels)
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(lab), dtype=bool)
    intra = sim[same & off].mean()
    inter = sim[~same].mean()
    return float(intra), float(inter)
