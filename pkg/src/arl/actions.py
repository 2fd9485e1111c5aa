"""Oracle action semantics: object filters, action steps and their deterministic execution."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

from .scene import (
    ATTRIBUTE_NAMES,
    ATTRIBUTES,
    GROUND,
    MIN_SEP,
    PLANAR_RELATIONS,
    RELATIONS,
    SIZES,
    ObjectNode,
    SceneGraph,
    canonical_coord,
    derive_relations,
)

PLACE_OFFSET = 0.15
NUDGE_STEP = 0.05
KINDS = ("add", "remove", "change", "move")

_AXIS_STEP = {
    "left": (-PLACE_OFFSET, 0.0),
    "right": (PLACE_OFFSET, 0.0),
    "front": (0.0, -PLACE_OFFSET),
    "behind": (0.0, PLACE_OFFSET),
}


class ActionError(ValueError):
    """Raised when an action cannot be applied; ``step`` is set by program execution."""

    code = "action-error"

    def __init__(self, message: str, step: int | None = None):
        self.message = message
        self.step = step
        super().__init__(self._text())

    def _text(self) -> str:
        where = f"step {self.step}: " if self.step is not None else ""
        return f"{where}{self.code}: {self.message}"

    def at_step(self, step: int) -> "ActionError":
        self.step = step
        self.args = (self._text(),)
        return self


class AmbiguousReferentError(ActionError):
    code = "ambiguous-referent"


class SceneFullError(ActionError):
    code = "scene-full"


class UnplaceableError(ActionError):
    code = "unplaceable"


class SizeRuleError(UnplaceableError):
    code = "size-rule"


class PronounError(ActionError):
    code = "pronoun"


@dataclass(frozen=True)
class ObjectFilter:
    color: str | None = None
    shape: str | None = None
    size: str | None = None
    material: str | None = None
    relation: str | None = None
    referent: "ObjectFilter | None" = None

    def __post_init__(self):
        attrs = {n: getattr(self, n) for n in ATTRIBUTE_NAMES}
        for name, value in attrs.items():
            if value is not None and value not in ATTRIBUTES[name]:
                raise ValueError(f"unknown {name} {value!r}")
        if (self.relation is None) != (self.referent is None):
            raise ValueError("relation and referent must be given together")
        if self.relation is not None:
            if self.relation not in RELATIONS:
                raise ValueError(f"unknown relation {self.relation!r}")
            if self.referent.referent is not None:
                raise ValueError("referent filters nest at most one level")
        if all(v is None for v in attrs.values()) and self.relation is None:
            raise ValueError("filter needs at least one constraint")

    def attributes(self) -> dict[str, str]:
        return {n: getattr(self, n) for n in ATTRIBUTE_NAMES if getattr(self, n) is not None}

    def matches_attributes(self, obj: ObjectNode) -> bool:
        return all(obj.attr(n) == v for n, v in self.attributes().items())

    def to_dict(self) -> dict:
        d = dict(self.attributes())
        if self.relation is not None:
            d["relation"] = self.relation
            d["referent"] = self.referent.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectFilter":
        ref = d.get("referent")
        return cls(
            color=d.get("color"),
            shape=d.get("shape"),
            size=d.get("size"),
            material=d.get("material"),
            relation=d.get("relation"),
            referent=cls.from_dict(ref) if ref is not None else None,
        )


def resolve_referents(scene: SceneGraph, flt: ObjectFilter, relations=None) -> set[int]:
    """Slots of every object satisfying all constraints of ``flt``.

    A relational constraint holds when the object stands in the relation to at
    least one object matching the referent filter.
    """
    out = {o.slot for o in scene.objects if flt.matches_attributes(o)}
    if flt.relation is not None and out:
        rels = relations if relations is not None else derive_relations(scene)
        refs = resolve_referents(scene, flt.referent, rels)
        related = set()
        for r in refs:
            related |= rels.related(flt.relation, r)
        out &= related
    return out


# -- action steps ------------------------------------------------------------


@dataclass(frozen=True)
class Add:
    color: str
    shape: str
    size: str
    material: str
    relation: str
    referent: ObjectFilter | None  # None: bound to "it"
    kind = "add"

    def __post_init__(self):
        for name in ATTRIBUTE_NAMES:
            if getattr(self, name) not in ATTRIBUTES[name]:
                raise ValueError(f"unknown {name} {getattr(self, name)!r}")
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")


@dataclass(frozen=True)
class Remove:
    target: ObjectFilter | None
    kind = "remove"


@dataclass(frozen=True)
class Change:
    target: ObjectFilter | None
    attribute: str
    value: str
    kind = "change"

    def __post_init__(self):
        if self.attribute not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {self.attribute!r}")
        if self.value not in ATTRIBUTES[self.attribute]:
            raise ValueError(f"{self.value!r} is not a {self.attribute}")


@dataclass(frozen=True)
class Move:
    target: ObjectFilter | None
    relation: str
    referent: ObjectFilter
    kind = "move"

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")


ActionStep = Union[Add, Remove, Change, Move]


@dataclass(frozen=True)
class ActionProgram:
    steps: tuple
    pronoun: bool = False

    def __post_init__(self):
        if not 1 <= len(self.steps) <= 2:
            raise ValueError("an action program has one or two steps")
        if self.pronoun and len(self.steps) != 2:
            raise ValueError("pronoun binding needs a second step")
        for i, step in enumerate(self.steps):
            slot = step.referent if isinstance(step, Add) else step.target
            if slot is None and not (self.pronoun and i == 1):
                raise ValueError(f"step {i} has no filter and is not pronoun-bound")
        if self.pronoun:
            step = self.steps[1]
            if (step.referent if isinstance(step, Add) else step.target) is not None:
                raise ValueError("pronoun-bound step must leave its filter empty")

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(s.kind for s in self.steps)

    def to_dict(self) -> dict:
        return {"steps": [step_to_dict(s) for s in self.steps], "pronoun": self.pronoun}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionProgram":
        return cls(tuple(step_from_dict(s) for s in d["steps"]), bool(d.get("pronoun", False)))


def _fd(f: ObjectFilter | None):
    return None if f is None else f.to_dict()


def _ff(d):
    return None if d is None else ObjectFilter.from_dict(d)


def step_to_dict(step) -> dict:
    if isinstance(step, Add):
        obj = {n: getattr(step, n) for n in ATTRIBUTE_NAMES}
        return {"kind": "add", "object": obj, "relation": step.relation, "referent": _fd(step.referent)}
    if isinstance(step, Remove):
        return {"kind": "remove", "filter": _fd(step.target)}
    if isinstance(step, Change):
        return {"kind": "change", "filter": _fd(step.target), "attribute": step.attribute, "value": step.value}
    if isinstance(step, Move):
        return {"kind": "move", "filter": _fd(step.target), "relation": step.relation,
                "referent": _fd(step.referent)}
    raise TypeError(f"not an action step: {step!r}")


def step_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "add":
        return Add(**d["object"], relation=d["relation"], referent=_ff(d.get("referent")))
    if kind == "remove":
        return Remove(_ff(d.get("filter")))
    if kind == "change":
        return Change(_ff(d.get("filter")), d["attribute"], d["value"])
    if kind == "move":
        return Move(_ff(d.get("filter")), d["relation"], _ff(d["referent"]))
    raise ValueError(f"unknown action kind {kind!r}")


# -- geometry helpers ----------------------------------------------------------


def _unique(scene: SceneGraph, flt: ObjectFilter, what: str) -> int:
    found = resolve_referents(scene, flt)
    if len(found) != 1:
        raise AmbiguousReferentError(f"{what} matches {len(found)} objects, need exactly 1")
    return next(iter(found))


def _collides(x: float, y: float, ground: list[ObjectNode]) -> bool:
    return any(math.hypot(x - o.x, y - o.y) < MIN_SEP for o in ground)


def place_near(scene: SceneGraph, ref: ObjectNode, relation: str, exclude=()) -> tuple[float, float]:
    """Collision-free ground position ``relation`` of ``ref``.

    Offset by PLACE_OFFSET along the relation axis, then nudged along the
    perpendicular axis by 0, +1, -1, +2, ... NUDGE_STEP until it fits.
    """
    dx, dy = _AXIS_STEP[relation]
    bx, by = ref.x + dx, ref.y + dy
    ground = [o for o in scene.objects if o.support is GROUND and o.slot not in exclude]
    max_k = int(round(1.0 / NUDGE_STEP))
    for k in range(0, 2 * max_k + 1):
        shift = (k + 1) // 2 * (1 if k % 2 else -1) * NUDGE_STEP
        if dx:
            x, y = canonical_coord(bx), canonical_coord(by + shift)
        else:
            x, y = canonical_coord(bx + shift), canonical_coord(by)
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            continue
        if not _collides(x, y, ground):
            return x, y
    raise UnplaceableError(f"no collision-free position {relation} of slot {ref.slot}")


def _size_ok(base: ObjectNode, top_size: str) -> bool:
    return SIZES.index(base.size) >= SIZES.index(top_size)


def _land(scene: SceneGraph, departing: set[int]) -> dict[int, int | None]:
    """New support for each surviving object whose support is departing: first survivor below, else ground."""
    by_slot = {o.slot: o for o in scene.objects}
    out = {}
    for o in scene.objects:
        if o.slot in departing or o.support not in departing:
            continue
        sup = o.support
        while sup is not GROUND and sup in departing:
            sup = by_slot[sup].support
        out[o.slot] = sup
    return out


def _set_stack_position(objs: dict[int, ObjectNode], slot: int, x: float, y: float) -> None:
    objs[slot] = replace(objs[slot], x=x, y=y)
    for o in list(objs.values()):
        if o.support == slot:
            _set_stack_position(objs, o.slot, x, y)


# -- the four primitives -------------------------------------------------------


def apply_add(scene: SceneGraph, step: Add, referent: int | None = None) -> SceneGraph:
    return _add(scene, step, referent)[0]


def _add(scene, step: Add, referent=None):
    ref_slot = referent if referent is not None else _unique(scene, step.referent, "add referent")
    free = scene.free_slots()
    if not free:
        raise SceneFullError(f"all {scene.n_max} slots occupied")
    slot = free[0]
    ref = scene.get(ref_slot)
    attrs = {n: getattr(step, n) for n in ATTRIBUTE_NAMES}
    if step.relation == "on":
        if not _size_ok(ref, step.size):
            raise UnplaceableError(f"a {step.size} object cannot rest on {ref.size} slot {ref.slot}")
        if scene.carried_by(ref.slot):
            raise UnplaceableError(f"slot {ref.slot} already carries an object")
        node = ObjectNode(slot, **attrs, x=ref.x, y=ref.y, support=ref.slot)
    else:
        x, y = place_near(scene, ref, step.relation)
        node = ObjectNode(slot, **attrs, x=x, y=y, support=GROUND)
    return scene.with_objects(scene.objects + (node,)), {slot}


def apply_remove(scene: SceneGraph, target: ObjectFilter | Remove) -> SceneGraph:
    flt = target.target if isinstance(target, Remove) else target
    return _remove(scene, resolve_referents(scene, flt))[0]


def _remove(scene, gone: set[int]):
    if not gone:
        return scene, set()
    landing = _land(scene, gone)
    kept = []
    for o in scene.objects:
        if o.slot in gone:
            continue
        if o.slot in landing:
            o = replace(o, support=landing[o.slot])
        kept.append(o)
    return scene.with_objects(kept), set()


def apply_change(scene: SceneGraph, target, attribute: str | None = None, value: str | None = None) -> SceneGraph:
    if isinstance(target, Change):
        target, attribute, value = target.target, target.attribute, target.value
    return _change(scene, resolve_referents(scene, target), attribute, value)[0]


def _change(scene, hit: set[int], attribute: str, value: str):
    if value not in ATTRIBUTES[attribute]:
        raise ValueError(f"{value!r} is not a {attribute}")
    objs = {o.slot: o for o in scene.objects}
    for s in hit:
        objs[s] = replace(objs[s], **{attribute: value})
    if attribute == "size":
        _restack(objs, scene.n_max)
    return scene.with_objects(objs.values()), set(hit)


def _restack(objs: dict[int, ObjectNode], n_max: int) -> None:
    """Resettle objects that broke the size rule next to their former base."""
    while True:
        bad = [o for o in sorted(objs.values(), key=lambda o: o.slot)
               if o.support is not GROUND and not _size_ok(objs[o.support], o.size)]
        if not bad:
            return
        o = bad[0]
        base = objs[o.support]
        objs[o.slot] = replace(o, support=GROUND)
        current = SceneGraph(tuple(objs.values()), n_max)
        for rel in ("right", "left", "behind", "front"):
            try:
                x, y = place_near(current, base, rel, exclude={o.slot})
                break
            except UnplaceableError:
                continue
        else:
            raise UnplaceableError(f"slot {o.slot} fell off slot {base.slot} and has nowhere to land")
        _set_stack_position(objs, o.slot, x, y)


def apply_move(scene: SceneGraph, step: Move, target: int | None = None) -> SceneGraph:
    return _move(scene, step, target)[0]


def _move(scene, step: Move, target=None):
    t = target if target is not None else _unique(scene, step.target, "move target")
    r = _unique(scene, step.referent, "move destination")
    if r == t:
        raise AmbiguousReferentError("move destination is the moved object itself")
    mover = scene.get(t)
    objs = {o.slot: o for o in scene.objects}
    for slot, sup in _land(scene, {t}).items():
        objs[slot] = replace(objs[slot], support=sup)
    ref = objs[r]
    if step.relation == "on":
        if not _size_ok(ref, mover.size):
            raise SizeRuleError(f"a {mover.size} object cannot rest on {ref.size} slot {r}")
        if any(o.support == r for s, o in objs.items() if s != t):
            raise UnplaceableError(f"slot {r} already carries an object")
        objs[t] = replace(mover, x=ref.x, y=ref.y, support=r)
    else:
        objs[t] = replace(mover, support=GROUND)
        current = SceneGraph(tuple(objs.values()), scene.n_max)
        x, y = place_near(current, ref, step.relation, exclude={t})
        objs[t] = replace(objs[t], x=x, y=y)
    return scene.with_objects(objs.values()), {t}


# -- programs ----------------------------------------------------------------


def apply_step(scene: SceneGraph, step, it: int | None = None):
    """Apply one step; returns (scene, acted slots). ``it`` fills an empty filter."""
    if isinstance(step, Add):
        return _add(scene, step, it if step.referent is None else None)
    if isinstance(step, Remove):
        gone = {it} if step.target is None else resolve_referents(scene, step.target)
        return _remove(scene, gone)
    if isinstance(step, Change):
        hit = {it} if step.target is None else resolve_referents(scene, step.target)
        return _change(scene, hit, step.attribute, step.value)
    if isinstance(step, Move):
        return _move(scene, step, it if step.target is None else None)
    raise TypeError(f"not an action step: {step!r}")


def execute_action_program(scene: SceneGraph, program: ActionProgram) -> SceneGraph:
    it = None
    for i, step in enumerate(program.steps):
        if program.pronoun and i == 1:
            if it is None:
                raise PronounError("'it' has no single antecedent in step 0", step=1)
        try:
            scene, acted = apply_step(scene, step, it if (program.pronoun and i == 1) else None)
        except ActionError as exc:
            raise exc.at_step(i) from None
        it = next(iter(acted)) if len(acted) == 1 else None
    return scene
