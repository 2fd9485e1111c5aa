"""Seeded generator of hypothetical-action episodes and the text vocabulary.

Every episode draws from its own RNG stream keyed by (seed, split, index), so
any single episode can be regenerated without replaying the split.
"""

from __future__ import annotations

import itertools
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import (
    KINDS,
    ActionError,
    ActionProgram,
    Add,
    Change,
    Move,
    ObjectFilter,
    Remove,
    apply_step,
    execute_action_program,
    resolve_referents,
)
from .questions import ANSWERS, MAX_COUNT, Q, execute_question, q, select
from .scene import (
    ATTRIBUTE_NAMES,
    ATTRIBUTES,
    GROUND,
    MIN_SEP,
    N_MAX,
    PLANAR_RELATIONS,
    SIZES,
    ObjectNode,
    SceneGraph,
    scene_from_dict,
    scenes_equivalent,
    serialize,
)

SPLITS = ("train", "val", "test", "2hop_ta", "2hop_qh")
REASONING = ("count", "exist", "compare_integer", "compare_attribute", "query_attribute")
REASONING_2HOP = ("and", "or", "not")
KIND_PAIRS = tuple(itertools.combinations(KINDS, 2))
LATTICE = tuple(round(0.05 * k, 2) for k in range(1, 20))

SYNONYMS: dict[str, tuple[str, ...]] = {
    "sphere": ("ball",),
    "spheres": ("balls",),
    "cube": ("block",),
    "cubes": ("blocks",),
    "big": ("large",),
    "small": ("tiny",),
    "metal": ("metallic", "shiny"),
    "rubber": ("matte",),
    "thing": ("object",),
    "things": ("objects",),
}


class NoValidAction(Exception):
    pass


class NoValidQuestion(Exception):
    pass


class SamplingExhausted(Exception):
    pass


@dataclass
class DatasetConfig:
    seed: int = 0
    counts: dict = field(default_factory=lambda: {
        "train": 10_000, "val": 1_000, "test": 1_000, "2hop_ta": 500, "2hop_qh": 500})
    n_max: int = N_MAX
    min_objects: int = 3
    max_objects: int = 10
    action_mix: dict = field(default_factory=lambda: {k: 0.25 for k in KINDS})
    reasoning_mix: dict = field(default_factory=lambda: {r: 0.2 for r in REASONING})
    synonym_prob: float = 0.3
    stack_prob: float = 0.2
    relational_filter_prob: float = 0.15
    max_rejections: int = 1000

    def __post_init__(self):
        for name, n in self.counts.items():
            if name not in SPLITS:
                raise ValueError(f"unknown split {name!r}")
            if n < 0:
                raise ValueError(f"negative count for {name}")
        for name, mix in (("action_mix", self.action_mix), ("reasoning_mix", self.reasoning_mix)):
            if abs(sum(mix.values()) - 1.0) > 1e-9 or any(v < 0 for v in mix.values()):
                raise ValueError(f"{name} must be non-negative and sum to 1")
        if not 1 <= self.min_objects <= self.max_objects <= self.n_max:
            raise ValueError("need 1 <= min_objects <= max_objects <= n_max")


# -- scenes ---------------------------------------------------------------------


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _random_attrs(rng) -> dict[str, str]:
    return {n: _pick(rng, ATTRIBUTES[n]) for n in ATTRIBUTE_NAMES}


def _ground_positions(rng, n: int, max_rejections: int):
    """Lattice points with distinct x and distinct y, pairwise at least MIN_SEP apart."""
    pts: list[tuple[float, float]] = []
    rejections = 0
    while len(pts) < n:
        x, y = _pick(rng, LATTICE), _pick(rng, LATTICE)
        ok = all(x != px and y != py and np.hypot(x - px, y - py) >= MIN_SEP for px, py in pts)
        if ok:
            pts.append((x, y))
            continue
        rejections += 1
        if rejections > max_rejections:
            raise SamplingExhausted(f"placed {len(pts)}/{n} objects")
    return pts


def sample_scene(rng, config: DatasetConfig | None = None, n_objects: int | None = None) -> SceneGraph:
    config = config or DatasetConfig()
    n = n_objects if n_objects is not None else int(rng.integers(config.min_objects, config.max_objects + 1))
    while True:
        attrs = [_random_attrs(rng) for _ in range(n)]
        stack = None
        if n >= 2 and rng.random() < config.stack_prob:
            top = int(rng.integers(n))
            bases = [i for i in range(n) if i != top
                     and SIZES.index(attrs[i]["size"]) >= SIZES.index(attrs[top]["size"])]
            if bases:
                stack = (top, _pick(rng, bases))
        n_ground = n - (1 if stack else 0)
        try:
            pts = _ground_positions(rng, n_ground, config.max_rejections)
        except SamplingExhausted:
            if n <= 1:
                raise
            n -= 1
            continue
        it = iter(pts)
        coords = {i: next(it) for i in range(n) if not (stack and i == stack[0])}
        objs = []
        for i in range(n):
            if stack and i == stack[0]:
                x, y = coords[stack[1]]
                objs.append(ObjectNode(i, **attrs[i], x=x, y=y, support=stack[1]))
            else:
                objs.append(ObjectNode(i, **attrs[i], x=coords[i][0], y=coords[i][1]))
        return SceneGraph(tuple(objs), config.n_max)


# -- noun phrases ---------------------------------------------------------------

_REL_WORDS = {
    "left": ("left of", "to the left of"),
    "right": ("right of", "to the right of"),
    "front": ("in front of",),
    "behind": ("behind",),
    "on": ("on", "on top of"),
}


def _noun(shape: str | None, plural: bool) -> str:
    if shape is None:
        return "things" if plural else "thing"
    return shape + "s" if plural else shape


def noun_phrase(flt: ObjectFilter | dict, plural: bool, rng) -> str:
    attrs = flt.attributes() if isinstance(flt, ObjectFilter) else flt
    words = [attrs[n] for n in ("size", "color", "material") if n in attrs]
    words.append(_noun(attrs.get("shape"), plural))
    text = " ".join(words)
    if isinstance(flt, ObjectFilter) and flt.relation is not None:
        text += f" {_pick(rng, _REL_WORDS[flt.relation])} the {noun_phrase(flt.referent, False, rng)}"
    return text


def apply_synonyms(text: str, rng, prob: float) -> str:
    out = []
    for tok in text.split(" "):
        if tok in SYNONYMS and rng.random() < prob:
            tok = _pick(rng, SYNONYMS[tok])
        out.append(tok)
    return " ".join(out)


# -- filters --------------------------------------------------------------------


def unique_filter(rng, scene: SceneGraph, slot: int, exclude: tuple[str, ...] = ()) -> ObjectFilter | None:
    """Smallest attribute filter picking out ``slot`` alone (random among ties)."""
    obj = scene.get(slot)
    names = [n for n in ATTRIBUTE_NAMES if n not in exclude]
    for k in range(1, len(names) + 1):
        combos = list(itertools.combinations(names, k))
        order = rng.permutation(len(combos))
        for i in order:
            flt = ObjectFilter(**{n: obj.attr(n) for n in combos[i]})
            if resolve_referents(scene, flt) == {slot}:
                return flt
    return None


def _group_filter(rng, scene: SceneGraph, config: DatasetConfig) -> ObjectFilter:
    """Attribute filter matching at least one object, optionally with a relational clause."""
    obj = _pick(rng, scene.objects)
    k = 1 if rng.random() < 0.6 else 2
    names = sorted(rng.choice(len(ATTRIBUTE_NAMES), size=k, replace=False))
    base = {ATTRIBUTE_NAMES[i]: obj.attr(ATTRIBUTE_NAMES[i]) for i in names}
    if rng.random() < config.relational_filter_prob and len(scene) >= 2:
        others = [o for o in scene.objects if o.slot != obj.slot]
        ref = _pick(rng, others)
        ref_f = unique_filter(rng, scene, ref.slot)
        rel = _pick(rng, PLANAR_RELATIONS)
        if ref_f is not None:
            flt = ObjectFilter(**base, relation=rel, referent=ref_f)
            if resolve_referents(scene, flt):
                return flt
    return ObjectFilter(**base)


# -- actions --------------------------------------------------------------------

_ADD_T = ("add a {obj} {rel} the {ref}", "place a {obj} {rel} the {ref}", "put a {obj} {rel} the {ref}",
          "insert a {obj} {rel} the {ref}", "a {obj} is added {rel} the {ref}", "add one {obj} {rel} the {ref}")
_ADD_IT = ("add a {obj} {rel} it", "place a {obj} {rel} it", "put a {obj} {rel} it")
_REMOVE_T = ("remove all {pl}", "take away all {pl}", "delete every {sg}", "get rid of all {pl}",
             "remove every {sg} from the scene", "take all {pl} out of the scene")
_REMOVE_IT = ("remove it", "take it away", "get rid of it")
_CHANGE_T = {
    "color": ("paint all {pl} {v}", "color every {sg} {v}", "change the color of all {pl} to {v}",
              "make all {pl} {v}", "paint every {sg} {v}", "all {pl} become {v}"),
    "shape": ("turn all {pl} into {vpl}", "change the shape of all {pl} to {v}", "make every {sg} a {v}",
              "transform all {pl} into {vpl}", "reshape every {sg} into a {v}", "all {pl} become {vpl}"),
    "size": ("make all {pl} {v}", "change the size of all {pl} to {v}", "resize every {sg} to {v}",
             "make every {sg} {v}", "all {pl} become {v}", "scale all {pl} to {v}"),
    "material": ("make all {pl} {v}", "change the material of all {pl} to {v}", "make every {sg} out of {v}",
                 "turn all {pl} into {v}", "all {pl} become {v}", "switch every {sg} to {v}"),
}
_CHANGE_IT = {
    "color": ("paint it {v}", "color it {v}", "make it {v}"),
    "shape": ("turn it into a {v}", "make it a {v}", "reshape it into a {v}"),
    "size": ("make it {v}", "resize it to {v}", "change its size to {v}"),
    "material": ("make it {v}", "change its material to {v}", "turn it into {v}"),
}
_MOVE_T = ("move the {t} {rel} the {ref}", "put the {t} {rel} the {ref}", "place the {t} {rel} the {ref}",
           "shift the {t} {rel} the {ref}", "relocate the {t} {rel} the {ref}", "carry the {t} {rel} the {ref}")
_MOVE_IT = ("move it {rel} the {ref}", "put it {rel} the {ref}", "place it {rel} the {ref}")


def _fmt(template: str, **kw) -> str:
    return template.format(**kw)


def _sample_add(rng, scene: SceneGraph, it: int | None, config):
    if not scene.free_slots():
        raise NoValidAction("scene is full")
    attrs = _random_attrs(rng)
    rel = "on" if rng.random() < 0.2 else _pick(rng, PLANAR_RELATIONS)
    if it is not None:
        step = Add(**attrs, relation=rel, referent=None)
        text = _fmt(_pick(rng, _ADD_IT), obj=noun_phrase(attrs, False, rng), rel=_pick(rng, _REL_WORDS[rel]))
        return step, text, it
    order = rng.permutation(len(scene))
    for i in order:
        ref = scene.objects[i]
        flt = unique_filter(rng, scene, ref.slot)
        if flt is None:
            continue
        step = Add(**attrs, relation=rel, referent=flt)
        text = _fmt(_pick(rng, _ADD_T), obj=noun_phrase(attrs, False, rng),
                    rel=_pick(rng, _REL_WORDS[rel]), ref=noun_phrase(flt, False, rng))
        return step, text, None
    raise NoValidAction("no uniquely describable referent")


def _sample_remove(rng, scene, it, config):
    if it is not None:
        return Remove(None), _pick(rng, _REMOVE_IT), it
    flt = _group_filter(rng, scene, config)
    text = _fmt(_pick(rng, _REMOVE_T), pl=noun_phrase(flt, True, rng), sg=noun_phrase(flt, False, rng))
    return Remove(flt), text, None


def _sample_change(rng, scene, it, config):
    attr = _pick(rng, ATTRIBUTE_NAMES)
    targets = [it] if it is not None else None
    flt = None
    if it is None:
        flt = _group_filter(rng, scene, config)
        targets = sorted(resolve_referents(scene, flt))
    current = {scene.get(s).attr(attr) for s in targets}
    choices = [v for v in ATTRIBUTES[attr] if current != {v}]
    v = _pick(rng, choices)
    vpl = v + "s"
    if it is not None:
        return Change(None, attr, v), _fmt(_pick(rng, _CHANGE_IT[attr]), v=v), it
    text = _fmt(_pick(rng, _CHANGE_T[attr]), pl=noun_phrase(flt, True, rng), sg=noun_phrase(flt, False, rng),
                v=v, vpl=vpl)
    return Change(flt, attr, v), text, None


def _sample_move(rng, scene, it, config):
    if len(scene) < 2:
        raise NoValidAction("move needs two objects")
    rel = "on" if rng.random() < 0.3 else _pick(rng, PLANAR_RELATIONS)
    slots = list(scene.slots)
    if it is not None:
        t_slot, t_flt = it, None
    else:
        t_slot = _pick(rng, slots)
        t_flt = unique_filter(rng, scene, t_slot)
        if t_flt is None:
            raise NoValidAction("target not describable")
    refs = [s for s in slots if s != t_slot]
    r_slot = _pick(rng, refs)
    r_flt = unique_filter(rng, scene, r_slot)
    if r_flt is None:
        raise NoValidAction("destination not describable")
    step = Move(t_flt, rel, r_flt)
    words = _pick(rng, _REL_WORDS[rel])
    if it is not None:
        text = _fmt(_pick(rng, _MOVE_IT), rel=words, ref=noun_phrase(r_flt, False, rng))
    else:
        text = _fmt(_pick(rng, _MOVE_T), t=noun_phrase(t_flt, False, rng), rel=words,
                    ref=noun_phrase(r_flt, False, rng))
    return step, text, it


_STEP_SAMPLERS = {"add": _sample_add, "remove": _sample_remove, "change": _sample_change, "move": _sample_move}


def _effective_step(rng, scene, kind, it, config, attempts=20):
    """Sample a step that executes and visibly changes the scene."""
    for _ in range(attempts):
        try:
            step, text, bound = _STEP_SAMPLERS[kind](rng, scene, it, config)
            post, acted = apply_step(scene, step, bound)
        except (NoValidAction, ActionError):
            continue
        if len(post) == 0 or scenes_equivalent(post, scene):
            continue
        return step, text, post, acted
    raise NoValidAction(f"no effective {kind} action for this scene")


def sample_action(rng, scene: SceneGraph, kind, config: DatasetConfig | None = None):
    """Return ``(ActionProgram, text)`` for one kind or a pair of kinds (2-hop)."""
    config = config or DatasetConfig()
    kinds = (kind,) if isinstance(kind, str) else tuple(kind)
    if len(kinds) == 1:
        step, text, _, _ = _effective_step(rng, scene, kinds[0], None, config)
        return ActionProgram((step,)), apply_synonyms(text, rng, config.synonym_prob)
    first, second = kinds if rng.random() < 0.5 else kinds[::-1]
    if first == "remove" and second == "remove":
        raise NoValidAction("pairs are of distinct kinds")
    s1, t1, mid, acted = _effective_step(rng, scene, first, None, config)
    it = next(iter(acted)) if (len(acted) == 1 and rng.random() < 0.5) else None
    s2, t2, _, _ = _effective_step(rng, mid, second, it, config)
    program = ActionProgram((s1, s2), pronoun=it is not None)
    joiner = _pick(rng, ("then", "and then"))
    return program, apply_synonyms(f"{t1} {joiner} {t2}", rng, config.synonym_prob)


# -- questions ------------------------------------------------------------------


def _filter_program(flt: ObjectFilter, source: Q | None = None) -> Q:
    node = source if source is not None else q("scene")
    if flt.relation is not None:
        node = q("relate", q("unique", _filter_program(flt.referent)), flt.relation)
    for name in ATTRIBUTE_NAMES:
        v = getattr(flt, name)
        if v is not None:
            node = q(f"filter_{name}", node, v)
    return node


def _set_expr(rng, scene, config):
    """A set-valued program plus plural/singular phrases describing it."""
    if rng.random() < 0.8:
        obj = _pick(rng, scene.objects)
        attrs = {n: obj.attr(n) for n in ATTRIBUTE_NAMES}
    else:
        attrs = _random_attrs(rng)
    k = int(rng.integers(1, 3))
    names = sorted(rng.choice(len(ATTRIBUTE_NAMES), size=k, replace=False))
    base = {ATTRIBUTE_NAMES[i]: attrs[ATTRIBUTE_NAMES[i]] for i in names}
    flt = ObjectFilter(**base)
    if rng.random() < 0.2 and len(scene) >= 2:
        ref = _pick(rng, scene.objects)
        ref_f = unique_filter(rng, scene, ref.slot)
        if ref_f is not None:
            flt = ObjectFilter(**base, relation=_pick(rng, PLANAR_RELATIONS), referent=ref_f)
    return _filter_program(flt), noun_phrase(flt, True, rng), noun_phrase(flt, False, rng)


_COUNT_T = ("how many {pl} are there?", "what number of {pl} are there?", "how many {pl} are in the scene?",
            "what is the number of {pl}?", "count the {pl}.")
_COUNT_SAME_T = ("how many other things are the same {attr} as the {o}?",
                 "what number of other things have the same {attr} as the {o}?")
_EXIST_T = ("are there any {pl}?", "is there a {sg}?", "does a {sg} exist?", "are any {pl} present?",
            "is there any {sg}?")
_CMP_INT_T = {
    "greater_than": ("are there more {a} than {b}?", "is the number of {a} greater than the number of {b}?"),
    "less_than": ("are there fewer {a} than {b}?", "is the number of {a} less than the number of {b}?"),
    "equal_integer": ("are there the same number of {a} and {b}?", "are there as many {a} as {b}?",
                      "is the number of {a} equal to the number of {b}?"),
}
_CMP_ATTR_T = ("is the {a} the same {attr} as the {b}?", "does the {a} have the same {attr} as the {b}?",
               "are the {a} and the {b} the same {attr}?", "do the {a} and the {b} have the same {attr}?",
               "is the {a} of the same {attr} as the {b}?")
_QUERY_T = {
    "color": ("what color is the {o}?", "what is the color of the {o}?", "the {o} has what color?"),
    "shape": ("what shape is the {o}?", "what is the shape of the {o}?", "the {o} has what shape?"),
    "size": ("what size is the {o}?", "how big is the {o}?", "what is the size of the {o}?"),
    "material": ("what material is the {o} made of?", "what is the {o} made of?",
                 "what is the material of the {o}?"),
}
_AND_T = ("how many things are both {a} and {b}?", "are there any things that are both {a} and {b}?")
_OR_T = ("how many objects are either {a} or {b}?", "are there any things that are either {a} or {b}?")
_NOT_T = ("how many things are not {a}?", "are there any things that are not {a}?")


def _unique_objects(rng, scene, exclude=()):
    pairs = []
    for o in scene.objects:
        f = unique_filter(rng, scene, o.slot, exclude)
        if f is not None:
            pairs.append((o.slot, f))
    return pairs


def _predicate(rng, scene):
    """A single-attribute set program and its adjective/noun word."""
    obj = _pick(rng, scene.objects) if rng.random() < 0.8 else None
    name = _pick(rng, ATTRIBUTE_NAMES)
    value = obj.attr(name) if obj is not None else _pick(rng, ATTRIBUTES[name])
    return (name, value), q(f"filter_{name}", q("scene"), value), value


def sample_question(rng, scene: SceneGraph, reasoning: str, config: DatasetConfig | None = None):
    """Return ``(program, text, answer)``; raises NoValidQuestion when the scene cannot support it."""
    config = config or DatasetConfig()
    for _ in range(30):
        try:
            program, text = _QUESTION_BUILDERS[reasoning](rng, scene, config)
        except NoValidQuestion:
            continue
        answer = execute_question(scene, program)
        if program.fn == "count" and len(select(scene, program.args[0])) > MAX_COUNT:
            continue
        return program, apply_synonyms(text, rng, config.synonym_prob), answer
    raise NoValidQuestion(f"no {reasoning} question for this scene")


def _q_count(rng, scene, config):
    if rng.random() < 0.15:
        pairs = _unique_objects(rng, scene)
        if not pairs:
            raise NoValidQuestion("nothing uniquely describable")
        slot, f = _pick(rng, pairs)
        attr = _pick(rng, ATTRIBUTE_NAMES)
        prog = q("count", q(f"same_{attr}", q("unique", _filter_program(f))))
        return prog, _fmt(_pick(rng, _COUNT_SAME_T), attr=attr, o=noun_phrase(f, False, rng))
    prog, pl, sg = _set_expr(rng, scene, config)
    return q("count", prog), _fmt(_pick(rng, _COUNT_T), pl=pl, sg=sg)


def _q_exist(rng, scene, config):
    prog, pl, sg = _set_expr(rng, scene, config)
    return q("exist", prog), _fmt(_pick(rng, _EXIST_T), pl=pl, sg=sg)


def _q_compare_integer(rng, scene, config):
    a, apl, _ = _set_expr(rng, scene, config)
    b, bpl, _ = _set_expr(rng, scene, config)
    if a == b:
        raise NoValidQuestion("identical sides")
    fn = _pick(rng, tuple(_CMP_INT_T))
    return q(fn, q("count", a), q("count", b)), _fmt(_pick(rng, _CMP_INT_T[fn]), a=apl, b=bpl)


def _q_compare_attribute(rng, scene, config):
    attr = _pick(rng, ATTRIBUTE_NAMES)
    pairs = _unique_objects(rng, scene, exclude=(attr,))
    if len(pairs) < 2:
        raise NoValidQuestion("need two describable objects")
    i, j = rng.choice(len(pairs), size=2, replace=False)
    (_, fa), (_, fb) = pairs[i], pairs[j]
    prog = q(f"equal_{attr}", q(f"query_{attr}", q("unique", _filter_program(fa))),
             q(f"query_{attr}", q("unique", _filter_program(fb))))
    text = _fmt(_pick(rng, _CMP_ATTR_T), a=noun_phrase(fa, False, rng), b=noun_phrase(fb, False, rng), attr=attr)
    return prog, text


def _q_query_attribute(rng, scene, config):
    attr = _pick(rng, ATTRIBUTE_NAMES)
    pairs = _unique_objects(rng, scene, exclude=(attr,))
    if not pairs:
        raise NoValidQuestion("nothing describable without the queried attribute")
    _, f = _pick(rng, pairs)
    return q(f"query_{attr}", q("unique", _filter_program(f))), _fmt(_pick(rng, _QUERY_T[attr]),
                                                                        o=noun_phrase(f, False, rng))


def _two_predicates(rng, scene):
    (na, va), pa, wa = _predicate(rng, scene)
    (nb, vb), pb, wb = _predicate(rng, scene)
    if na == nb:
        raise NoValidQuestion("predicates on the same attribute")
    return pa, wa, pb, wb


def _q_and(rng, scene, config):
    pa, wa, pb, wb = _two_predicates(rng, scene)
    t = int(rng.integers(len(_AND_T)))
    head = "count" if t == 0 else "exist"
    return q(head, q("intersect", pa, pb)), _fmt(_AND_T[t], a=wa, b=wb)


def _q_or(rng, scene, config):
    pa, wa, pb, wb = _two_predicates(rng, scene)
    t = int(rng.integers(len(_OR_T)))
    head = "count" if t == 0 else "exist"
    return q(head, q("union", pa, pb)), _fmt(_OR_T[t], a=wa, b=wb)


def _q_not(rng, scene, config):
    _, pa, wa = _predicate(rng, scene)
    t = int(rng.integers(len(_NOT_T)))
    head = "count" if t == 0 else "exist"
    return q(head, q("negate_filter", q("scene"), pa)), _fmt(_NOT_T[t], a=wa)


_QUESTION_BUILDERS = {
    "count": _q_count,
    "exist": _q_exist,
    "compare_integer": _q_compare_integer,
    "compare_attribute": _q_compare_attribute,
    "query_attribute": _q_query_attribute,
    "and": _q_and,
    "or": _q_or,
    "not": _q_not,
}


# -- episodes -------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeRecord:
    id: str
    scene: SceneGraph
    action_text: str
    action_program: ActionProgram
    question_text: str
    question_program: Q
    post_scene: SceneGraph
    answer: str
    action_type: str
    reasoning_type: str

    def to_json(self) -> str:
        def j(v):
            return json.dumps(v, separators=(",", ":"))

        return (
            f'{{"id":{j(self.id)},"scene":{serialize(self.scene)},"action_text":{j(self.action_text)},'
            f'"action_program":{j(self.action_program.to_dict())},"question_text":{j(self.question_text)},'
            f'"question_program":{j(self.question_program.to_dict())},"post_scene":{serialize(self.post_scene)},'
            f'"answer":{j(self.answer)},"action_type":{j(self.action_type)},'
            f'"reasoning_type":{j(self.reasoning_type)}}}'
        )

    @classmethod
    def from_json(cls, line: str, n_max: int = N_MAX) -> "EpisodeRecord":
        d = json.loads(line)
        missing = [k for k in RECORD_FIELDS if k not in d]
        if missing:
            raise ValueError(f"record {d.get('id', '?')} is missing {missing}")
        if d["answer"] not in ANSWERS:
            raise ValueError(f"record {d['id']}: answer {d['answer']!r} not in vocabulary")
        return cls(
            id=d["id"],
            scene=scene_from_dict(d["scene"], n_max, location=f"{d['id']}.scene."),
            action_text=d["action_text"],
            action_program=ActionProgram.from_dict(d["action_program"]),
            question_text=d["question_text"],
            question_program=Q.from_dict(d["question_program"]),
            post_scene=scene_from_dict(d["post_scene"], n_max, location=f"{d['id']}.post_scene."),
            answer=d["answer"],
            action_type=d["action_type"],
            reasoning_type=d["reasoning_type"],
        )


RECORD_FIELDS = ("id", "scene", "action_text", "action_program", "question_text", "question_program",
                 "post_scene", "answer", "action_type", "reasoning_type")


def _schedule(mix: dict, i: int):
    """Deterministic weighted round-robin: label at position ``i``, prefix-independent of split size."""
    labels = list(mix)
    # largest deficit of (expected count so far) - (actual count so far)
    counts = dict.fromkeys(labels, 0)
    for step in range(i + 1):
        best = max(labels, key=lambda k: (mix[k] * (step + 1) - counts[k], -labels.index(k)))
        counts[best] += 1
    return best


def _labels(config: DatasetConfig, split: str, i: int):
    if split == "2hop_ta":
        action = KIND_PAIRS[i % len(KIND_PAIRS)]
    else:
        action = KINDS[i % len(KINDS)] if _uniform(config.action_mix) else _schedule(config.action_mix, i)
    if split == "2hop_qh":
        reasoning = REASONING_2HOP[i % len(REASONING_2HOP)]
    else:
        reasoning = (REASONING[i % len(REASONING)] if _uniform(config.reasoning_mix)
                     else _schedule(config.reasoning_mix, i))
    return action, reasoning


def _uniform(mix: dict) -> bool:
    vals = list(mix.values())
    return all(abs(v - vals[0]) < 1e-12 for v in vals)


def episode_rng(seed: int, split: str, index: int):
    return np.random.default_rng([seed, SPLITS.index(split), index])


def generate_episode(config: DatasetConfig, split: str, index: int) -> EpisodeRecord:
    rng = episode_rng(config.seed, split, index)
    action, reasoning = _labels(config, split, index)
    for _ in range(1000):
        scene = sample_scene(rng, config)
        try:
            program, action_text = sample_action(rng, scene, action, config)
        except NoValidAction:
            continue
        post = execute_action_program(scene, program)
        try:
            qprog, qtext, answer = sample_question(rng, post, reasoning, config)
        except NoValidQuestion:
            continue
        kinds = sorted(program.kinds, key=KINDS.index)
        return EpisodeRecord(
            id=f"{split}-{index:06d}",
            scene=scene,
            action_text=action_text,
            action_program=program,
            question_text=qtext,
            question_program=qprog,
            post_scene=post,
            answer=answer,
            action_type="+".join(kinds),
            reasoning_type=reasoning,
        )
    raise RuntimeError(f"could not generate episode {split}/{index}")


def generate_split(config: DatasetConfig, out_dir, splits=SPLITS) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split in splits:
        n = config.counts.get(split, 0)
        path = out / f"{split}.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i in range(n):
                fh.write(generate_episode(config, split, i).to_json() + "\n")
        paths[split] = path
    return paths


def load_split(path, n_max: int = N_MAX) -> list[EpisodeRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"split file {path} not found")
    with open(path, encoding="utf-8") as fh:
        return [EpisodeRecord.from_json(line, n_max) for line in fh if line.strip()]


def check_record(rec: EpisodeRecord) -> list[str]:
    """Oracle-closure problems for one record (empty when it replays exactly)."""
    problems = []
    post = execute_action_program(rec.scene, rec.action_program)
    if post != rec.post_scene:
        problems.append("post_scene does not replay")
    if execute_question(rec.post_scene, rec.question_program) != rec.answer:
        problems.append("answer does not replay")
    return problems


# -- text -----------------------------------------------------------------------

PAD, OOV = "<pad>", "<unk>"
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens):
        self.itos = [PAD, OOV] + [t for t in tokens if t not in (PAD, OOV)]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def index(self, token: str) -> int:
        return self.stoi.get(token, 1)

    def encode(self, text: str, max_len: int = 20) -> list[int]:
        ids = [self.index(t) for t in tokenize(text)][:max_len]
        return ids + [0] * (max_len - len(ids))

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos) -> "Vocab":
        v = cls([])
        v.itos = list(itos)
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        return v


def build_vocab(corpus) -> Vocab:
    counts = Counter(tok for text in corpus for tok in tokenize(text))
    return Vocab(sorted(counts))
