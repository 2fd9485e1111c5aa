"""Algebraic laws of the scene model, the action executor and the question executor.

Every law takes an integer seed, builds its own random case and raises
``AssertionError`` when the law fails. ``LAWS`` maps names to laws.
"""

import numpy as np

from arl.actions import ActionError, Add, ObjectFilter, apply_add, apply_change, apply_remove, resolve_referents
from arl.datagen import sample_scene, unique_filter
from arl.questions import execute_question, q, select
from arl.tensorize import discretize, encode_scene, lift
from arl.scene import (ATTRIBUTE_NAMES, ATTRIBUTES, PLANAR_RELATIONS, RELATIONS, ObjectNode, SceneGraph,
                       derive_relations, scenes_equivalent, stack_root, validate)

CONVERSE = {"left": "right", "right": "left", "front": "behind", "behind": "front"}


def _rng(seed):
    return np.random.default_rng([seed, 99])


def _scene(rng, max_objects=10):
    return sample_scene(rng, n_objects=int(rng.integers(1, max_objects + 1)))


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _attr_filter(rng, scene):
    obj = _pick(rng, scene.objects)
    names = rng.choice(len(ATTRIBUTE_NAMES), size=int(rng.integers(1, 3)), replace=False)
    return ObjectFilter(**{ATTRIBUTE_NAMES[i]: obj.attr(ATTRIBUTE_NAMES[i]) for i in sorted(names)})


def _set_program(rng, scene):
    """Random set-valued program: attribute filters, sometimes over a relate() source."""
    node = q("scene")
    if len(scene) >= 2 and rng.random() < 0.3:
        ref = _pick(rng, scene.objects)
        f = unique_filter(rng, scene, ref.slot)
        if f is not None:
            src = q("scene")
            for n, v in f.attributes().items():
                src = q(f"filter_{n}", src, v)
            node = q("relate", q("unique", src), _pick(rng, RELATIONS))
    for _ in range(int(rng.integers(0, 3))):
        name = _pick(rng, ATTRIBUTE_NAMES)
        node = q(f"filter_{name}", node, _pick(rng, ATTRIBUTES[name]))
    return node


def de_morgan(seed):
    rng = _rng(seed)
    s = _scene(rng)
    a, b = _set_program(rng, s), _set_program(rng, s)
    top = q("scene")

    def neg(x):
        return q("negate_filter", top, x)
    assert select(s, neg(q("union", a, b))) == select(s, q("intersect", neg(a), neg(b)))
    assert select(s, neg(q("intersect", a, b))) == select(s, q("union", neg(a), neg(b)))


def exist_count(seed):
    rng = _rng(seed)
    s = _scene(rng)
    f = _set_program(rng, s)
    n = len(select(s, f))
    assert (execute_question(s, q("exist", f)) == "yes") == (n >= 1)
    assert execute_question(s, q("count", f)) == str(min(n, 9))
    assert execute_question(s, q("count", q("scene"))) == str(min(len(s), 9))


def add_remove_inverse(seed):
    rng = _rng(seed)
    s = _scene(rng, max_objects=9)
    while all(unique_filter(rng, s, o.slot) is None for o in s.objects):
        s = _scene(rng, max_objects=9)  # identical twins only: nothing can be referred to
    taken = {tuple(o.attr(n) for n in ATTRIBUTE_NAMES) for o in s.objects}
    for _ in range(50):
        attrs = {n: _pick(rng, ATTRIBUTES[n]) for n in ATTRIBUTE_NAMES}
        if tuple(attrs.values()) in taken:
            continue
        ref = unique_filter(rng, s, _pick(rng, s.objects).slot)
        if ref is None:
            continue
        try:
            added = apply_add(s, Add(**attrs, relation=_pick(rng, RELATIONS), referent=ref))
        except ActionError:
            continue
        assert validate(added) == []
        assert len(added) == len(s) + 1
        back = apply_remove(added, ObjectFilter(**attrs))
        assert scenes_equivalent(back, s)
        return
    raise AssertionError("no placeable add found")


def change_idempotent(seed):
    rng = _rng(seed)
    s = _scene(rng)
    f = _attr_filter(rng, s)
    attr = _pick(rng, ATTRIBUTE_NAMES)
    value = _pick(rng, ATTRIBUTES[attr])
    once = apply_change(s, f, attr, value)
    assert validate(once) == []
    assert apply_change(once, f, attr, value) == once


def remove_monotone(seed):
    rng = _rng(seed)
    s = _scene(rng)
    f = _attr_filter(rng, s) if rng.random() < 0.8 else ObjectFilter(color=_pick(rng, ATTRIBUTES["color"]))
    matches = resolve_referents(s, f)
    out = apply_remove(s, f)
    assert len(out) == len(s) - len(matches)
    if len(out):
        assert validate(out) == []
    if not matches:
        assert out == s


def relation_antisymmetry(seed):
    s = _scene(_rng(seed))
    rel = derive_relations(s)
    slots = s.slots
    for a in slots:
        for b in slots:
            for r in PLANAR_RELATIONS:
                if rel.holds(r, a, b):
                    assert not rel.holds(r, b, a)
                    assert rel.holds(CONVERSE[r], b, a)
            if a != b and stack_root(s, a) == stack_root(s, b):
                assert not any(rel.holds(r, a, b) for r in PLANAR_RELATIONS)


def _warp(scene, p):
    """Strictly increasing coordinate map: keeps every relation."""
    objs = tuple(ObjectNode(o.slot, o.color, o.shape, o.size, o.material, round(o.x ** p, 6), round(o.y ** p, 6),
                            o.support) for o in scene.objects)
    return SceneGraph(objs, scene.n_max)


def equivalence_laws(seed):
    rng = _rng(seed)
    s = _scene(rng)
    t = _warp(s, float(rng.uniform(0.5, 2.0)))
    u = _warp(t, float(rng.uniform(0.5, 2.0)))
    v = _scene(rng)
    eq = scenes_equivalent
    for x in (s, t, u, v):
        assert eq(x, x)
    for x, y in ((s, t), (s, v), (t, v), (u, v)):
        assert eq(x, y) == eq(y, x)
    assert eq(s, t) and eq(t, u) and eq(s, u)
    if eq(s, v) and eq(v, u):
        assert eq(s, u)
    o = _pick(rng, s.objects)
    other = next(c for c in ATTRIBUTES["color"] if c != o.color)
    changed = s.replace_object(ObjectNode(o.slot, other, o.shape, o.size, o.material, o.x, o.y, o.support))
    assert not eq(s, changed)


def tensor_round_trip(seed):
    rng = _rng(seed)
    s, t = _scene(rng), _scene(rng)
    assert scenes_equivalent(discretize(lift(encode_scene(s))), s)
    assert (encode_scene(s).tobytes() == encode_scene(t).tobytes()) == (s == t)
    noisy = discretize(rng.normal(scale=3.0, size=encode_scene(s).shape))
    assert validate(noisy, check_separation=False) == [] or len(noisy) == 0


def actions_pure(seed):
    rng = _rng(seed)
    s = _scene(rng)
    snapshot = repr(s)
    f = _attr_filter(rng, s)
    first = apply_change(s, f, "color", "cyan"), apply_remove(s, f)
    assert repr(s) == snapshot
    assert (apply_change(s, f, "color", "cyan"), apply_remove(s, f)) == first


LAWS = {
    "de_morgan": de_morgan,
    "exist_count": exist_count,
    "add_remove_inverse": add_remove_inverse,
    "change_idempotent": change_idempotent,
    "remove_monotone": remove_monotone,
    "relation_antisymmetry": relation_antisymmetry,
    "equivalence_laws": equivalence_laws,
    "tensor_round_trip": tensor_round_trip,
    "actions_pure": actions_pure,
}


def run_all(n_cases):
    """Round-robin ``n_cases`` seeds over every law; returns cases run per law."""
    names = list(LAWS)
    counts = dict.fromkeys(names, 0)
    for i in range(n_cases):
        name = names[i % len(names)]
        try:
            LAWS[name](i)
        except AssertionError as exc:
            raise AssertionError(f"{name} failed for seed {i}: {exc}") from exc
        counts[name] += 1
    return counts
