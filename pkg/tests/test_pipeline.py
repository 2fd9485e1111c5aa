import dataclasses

import numpy as np
import pytest

from arl import nn
from arl.datagen import build_vocab
from arl.pipeline import (NO_ANSWER, NL2ActionRep, Pipeline, Stage1Model, TrainConfig, TrainingError, balanced_pairs,
                          cosine_separation, dump_action_embeddings, encode_action_pair, encode_texts,
                          load_pipeline, predict_post_scene, safe_answer, save_pipeline, stage2_loss_and_grads,
                          train_stage1, train_stage2)
from arl.questions import ANSWERS, q
from arl.scene import validate
from arl.tensorize import encode_batch
from gradcases import tiny_config


def small(**kw):
    base = dict(d_a=8, encoder_hidden=(24, 16), decoder_hidden=(24,), emb_dim=8, lstm_hidden=12, max_len=20,
                epochs1=3, epochs2=3, batch_size=32)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def trained(small_dataset):
    train = small_dataset["train"]
    cfg = small()
    pairs = balanced_pairs(train, 200, cfg.seed)
    stage1, _ = train_stage1([(a, b) for a, b, _ in pairs], cfg)
    vocab = build_vocab(e.action_text for e in train)
    nl, _ = train_stage2(train[:100], stage1, vocab, cfg, small_dataset["val"][:20])
    return Pipeline(stage1, nl, vocab, cfg)


def test_config_checks():
    with pytest.raises(ValueError):
        TrainConfig(d_a=0)
    with pytest.raises(ValueError):
        TrainConfig(encoder="cnn")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"d_a": 3, "depth": 2})
    cfg = TrainConfig(d_a=7)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_balanced_pairs(small_dataset):
    pairs = balanced_pairs(small_dataset["train"], 200)
    kinds = [k for _, _, k in pairs]
    assert all(kinds.count(k) == 50 for k in ("add", "remove", "change", "move"))
    assert pairs == balanced_pairs(small_dataset["train"], 200)
    with pytest.raises(TrainingError):
        balanced_pairs(small_dataset["train"], 4000)


def test_empty_inputs_rejected():
    with pytest.raises(TrainingError):
        train_stage1([], small())


@pytest.mark.parametrize("kind", ["add", "remove", "change", "move"])
def test_one_pair_memorised(small_dataset, kind):
    # default widths; unit coordinate weight and a constant rate, as in the plain scene loss
    e = next(e for e in small_dataset["train"] if e.action_type == kind)
    cfg = TrainConfig(epochs1=500, patience=500, coord_weight=1.0, stage1_lr_decay=1.0)
    model, m = train_stage1([(e.scene, e.post_scene)], cfg)
    assert m["train_loss"][-1] < 1e-2


def test_action_vector_shape_and_determinism(trained, small_dataset):
    e = small_dataset["test"][0]
    a = encode_action_pair(trained.stage1, e.scene, e.post_scene)
    assert a.shape == (8,)
    np.testing.assert_array_equal(a, encode_action_pair(trained.stage1, e.scene, e.post_scene))


def test_stage2_leaves_stage1_untouched(small_dataset):
    train = small_dataset["train"]
    cfg = small(epochs1=1, epochs2=2)
    stage1, _ = train_stage1([(e.scene, e.post_scene) for e in train[:64]], cfg)
    before = stage1.store.fingerprint()
    train_stage2(train[:64], stage1, build_vocab(e.action_text for e in train), cfg)
    assert stage1.store.fingerprint() == before


def test_cotrain_updates_decoder_only(small_dataset):
    train = small_dataset["train"]
    cfg = small(epochs1=1, epochs2=2, stage2_cotrain=True)
    stage1, _ = train_stage1([(e.scene, e.post_scene) for e in train[:64]], cfg)
    enc = {k: stage1.store[k].copy() for k in stage1.store.names("enc")}
    dec = {k: stage1.store[k].copy() for k in stage1.store.names("dec")}
    train_stage2(train[:64], stage1, build_vocab(e.action_text for e in train), cfg)
    assert all(np.array_equal(stage1.store[k], v) for k, v in enc.items())
    assert any(not np.array_equal(stage1.store[k], v) for k, v in dec.items())


def test_stage1_and_stage2_losses_agree(small_dataset):
    cfg = tiny_config()
    model = Stage1Model(cfg)
    eps = small_dataset["train"][:3]
    s, sp = encode_batch([e.scene for e in eps]), encode_batch([e.post_scene for e in eps])
    l1, _ = model.loss_and_grads(s, sp)
    a, _ = model.encode(s, sp)
    nl = NL2ActionRep(cfg, 40)
    nl.forward = lambda ids: (a, None)
    nl.backward = lambda cache, da, grads: None
    l2, _ = stage2_loss_and_grads(model, nl, s, sp, np.zeros((3, cfg.max_len), dtype=int), cfg)
    assert l1 == l2


def test_one_episode_memorised_through_frozen_decoder(small_dataset):
    e = small_dataset["train"][0]
    cfg = TrainConfig(epochs1=500, epochs2=500, patience=500, coord_weight=1.0, stage1_lr_decay=1.0)
    stage1, _ = train_stage1([(e.scene, e.post_scene)], cfg)
    nl, m = train_stage2([e], stage1, build_vocab([e.action_text]), cfg)
    assert m["train_loss"][-1] < 1e-2


def test_predictions_valid_and_deterministic(trained, small_dataset):
    eps = small_dataset["test"][:20]
    first = trained.predict_episodes(eps)
    assert first == trained.predict_episodes(eps)
    assert all(validate(s, check_separation=False) == [] for s in first)
    assert predict_post_scene(trained, eps[0].scene, eps[0].action_text) == first[0]


def test_unique_violation_is_no_answer(small_dataset):
    s = small_dataset["test"][0].scene
    assert safe_answer(s, q("query_color", q("unique", q("scene")))) == NO_ANSWER and NO_ANSWER not in ANSWERS


def test_checkpoint_round_trip(trained, small_dataset, tmp_path):
    save_pipeline(trained, tmp_path)
    back = load_pipeline(tmp_path)
    eps = small_dataset["val"][:10]
    assert back.config == trained.config and back.vocab == trained.vocab
    assert back.predict_episodes(eps) == trained.predict_episodes(eps)
    np.testing.assert_array_equal(back.action_vectors(["remove all red things"]),
                                  trained.action_vectors(["remove all red things"]))


def test_embedding_dump(trained, small_dataset, tmp_path):
    eps = small_dataset["val"]
    rows = dump_action_embeddings(trained, eps, tmp_path / "a.csv")
    assert len(rows) == len(eps) and len(rows[0]) == 2 + 8
    first = (tmp_path / "a.csv").read_bytes()
    dump_action_embeddings(trained, eps, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_bytes() == first


def test_cosine_separation_on_clusters():
    r = np.random.default_rng(0)
    centres = np.eye(4) * 5
    v = np.concatenate([centres[i] + r.normal(scale=0.1, size=(10, 4)) for i in range(4)])
    intra, inter = cosine_separation(v, np.repeat(np.arange(4), 10))
    assert intra > 0.9 and abs(inter) < 0.1


def test_texts_padded_and_truncated():
    vocab = build_vocab(["a b c"])
    ids = encode_texts(vocab, ["a b c " * 10, "c"], 5)
    assert ids.shape == (2, 5) and ids[1, 1:].tolist() == [0, 0, 0, 0]


def test_training_reproducible(small_dataset):
    pairs = [(e.scene, e.post_scene) for e in small_dataset["train"][:40]]
    cfg = small(epochs1=2)
    m1, a = train_stage1(pairs, cfg)
    m2, b = train_stage1(pairs, cfg)
    assert a == b and m1.store.fingerprint() == m2.store.fingerprint()
    m3, _ = train_stage1(pairs, dataclasses.replace(cfg, seed=1))
    assert m3.store.fingerprint() != m1.store.fingerprint()
