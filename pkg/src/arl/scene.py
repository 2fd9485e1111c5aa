"""Symbolic scene-graphs: objects, derived spatial relations, validation, JSON I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable

COLORS = ("red", "green", "gray", "blue", "brown", "yellow", "purple", "cyan")
SHAPES = ("cylinder", "sphere", "cube")
SIZES = ("small", "big")
MATERIALS = ("metal", "rubber")

ATTRIBUTES: dict[str, tuple[str, ...]] = {
    "color": COLORS,
    "shape": SHAPES,
    "size": SIZES,
    "material": MATERIALS,
}
ATTRIBUTE_NAMES = ("color", "shape", "size", "material")

PLANAR_RELATIONS = ("left", "right", "front", "behind")
RELATIONS = PLANAR_RELATIONS + ("on",)

GROUND = None
N_MAX = 10
MIN_SEP = 0.08
COORD_DIGITS = 6


def canonical_coord(v: float) -> float:
    # 6 decimals is the serialized precision; keeping values there makes JSON round-trips exact
    return round(float(v), COORD_DIGITS) + 0.0


@dataclass(frozen=True)
class ObjectNode:
    slot: int
    color: str
    shape: str
    size: str
    material: str
    x: float
    y: float
    support: int | None = GROUND

    def __post_init__(self):
        object.__setattr__(self, "x", canonical_coord(self.x))
        object.__setattr__(self, "y", canonical_coord(self.y))

    def attr(self, name: str) -> str:
        return getattr(self, name)

    @property
    def on_ground(self) -> bool:
        return self.support is GROUND


@dataclass(frozen=True)
class SceneGraph:
    objects: tuple[ObjectNode, ...]
    n_max: int = N_MAX

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(sorted(self.objects, key=lambda o: o.slot)))

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects)

    @property
    def slots(self) -> tuple[int, ...]:
        return tuple(o.slot for o in self.objects)

    def get(self, slot: int) -> ObjectNode:
        for o in self.objects:
            if o.slot == slot:
                return o
        raise KeyError(slot)

    def free_slots(self) -> list[int]:
        used = set(self.slots)
        return [s for s in range(self.n_max) if s not in used]

    def carried_by(self, slot: int) -> list[int]:
        return [o.slot for o in self.objects if o.support == slot]

    def with_objects(self, objects: Iterable[ObjectNode]) -> "SceneGraph":
        return SceneGraph(tuple(objects), self.n_max)

    def replace_object(self, node: ObjectNode) -> "SceneGraph":
        return self.with_objects([node if o.slot == node.slot else o for o in self.objects])


def stack_root(scene: SceneGraph, slot: int) -> int:
    """Slot at the bottom of the stack containing ``slot`` (cycle-safe)."""
    by_slot = {o.slot: o for o in scene.objects}
    seen = set()
    cur = slot
    while True:
        seen.add(cur)
        sup = by_slot[cur].support
        if sup is GROUND or sup not in by_slot or sup in seen:
            return cur
        cur = sup


@dataclass(frozen=True)
class RelationGraph:
    """Planar relations as (relation, a, b) triples meaning "a is <relation> of b"."""

    pairs: frozenset
    on: tuple  # ((slot, support), ...) sorted by slot

    def holds(self, relation: str, a: int, b: int) -> bool:
        if relation == "on":
            return dict(self.on).get(a) == b
        return (relation, a, b) in self.pairs

    def related(self, relation: str, b: int) -> set[int]:
        """Every slot standing in ``relation`` to ``b``."""
        if relation == "on":
            return {a for a, s in self.on if s == b}
        return {a for rel, a, bb in self.pairs if rel == relation and bb == b}


def derive_relations(scene: SceneGraph) -> RelationGraph:
    roots = {o.slot: stack_root(scene, o.slot) for o in scene.objects}
    pairs = set()
    for a in scene.objects:
        for b in scene.objects:
            if a.slot == b.slot or roots[a.slot] == roots[b.slot]:
                continue
            if a.x < b.x:
                pairs.add(("left", a.slot, b.slot))
            elif a.x > b.x:
                pairs.add(("right", a.slot, b.slot))
            if a.y > b.y:
                pairs.add(("behind", a.slot, b.slot))
            elif a.y < b.y:
                pairs.add(("front", a.slot, b.slot))
    on = tuple((o.slot, o.support) for o in scene.objects)
    return RelationGraph(frozenset(pairs), on)


@dataclass(frozen=True)
class Violation:
    rule: str
    slots: tuple[int, ...] = ()
    detail: str = ""

    def __str__(self) -> str:
        where = f" slots {list(self.slots)}" if self.slots else ""
        return f"{self.rule}{where}: {self.detail}" if self.detail else f"{self.rule}{where}"


def _size_rank(size: str) -> int:
    return SIZES.index(size)


def validate(scene: SceneGraph, check_separation: bool = True) -> list[Violation]:
    """Return every invariant violation found; an empty list means the scene is valid."""
    out: list[Violation] = []
    objs = scene.objects
    if not 1 <= len(objs) <= scene.n_max:
        out.append(Violation("object-count", (), f"{len(objs)} objects, capacity {scene.n_max}"))
    slots = [o.slot for o in objs]
    dupes = sorted({s for s in slots if slots.count(s) > 1})
    if dupes:
        out.append(Violation("duplicate-slot", tuple(dupes)))
    by_slot = {o.slot: o for o in objs}

    for o in objs:
        if not (isinstance(o.slot, int) and 0 <= o.slot < scene.n_max):
            out.append(Violation("slot-range", (o.slot,)))
        for name in ATTRIBUTE_NAMES:
            if o.attr(name) not in ATTRIBUTES[name]:
                out.append(Violation("unknown-attribute", (o.slot,), f"{name}={o.attr(name)!r}"))
        for axis in ("x", "y"):
            v = getattr(o, axis)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                out.append(Violation("coordinate-range", (o.slot,), f"{axis}={v}"))

    for o in objs:
        s = o.support
        if s is GROUND:
            continue
        if s == o.slot:
            out.append(Violation("self-support", (o.slot,)))
            continue
        if s not in by_slot:
            out.append(Violation("missing-support", (o.slot, s)))
            continue
        base = by_slot[s]
        if base.size in SIZES and o.size in SIZES and _size_rank(base.size) < _size_rank(o.size):
            out.append(Violation("size-support", (o.slot, s), f"{o.size} on {base.size}"))
        if (o.x, o.y) != (base.x, base.y):
            out.append(Violation("support-position", (o.slot, s)))

    reported = set()
    for o in objs:
        chain = [o.slot]
        cur = o
        while cur.support is not GROUND and cur.support in by_slot and cur.support != cur.slot:
            nxt = cur.support
            if nxt in chain:
                cyc = tuple(sorted(chain[chain.index(nxt):]))
                if cyc not in reported:
                    reported.add(cyc)
                    out.append(Violation("support-cycle", cyc))
                break
            chain.append(nxt)
            cur = by_slot[nxt]

    carriers: dict[int, list[int]] = {}
    for o in objs:
        if o.support is not GROUND:
            carriers.setdefault(o.support, []).append(o.slot)
    for base, tops in sorted(carriers.items()):
        if len(tops) > 1:
            out.append(Violation("multi-support", (base, *sorted(tops)), "one object per base"))

    if check_separation:
        ground = [o for o in objs if o.support is GROUND]
        for i, a in enumerate(ground):
            for b in ground[i + 1:]:
                if math.hypot(a.x - b.x, a.y - b.y) < MIN_SEP:
                    out.append(Violation("collision", (a.slot, b.slot)))
    return out


def scenes_equivalent(a: SceneGraph, b: SceneGraph) -> bool:
    """Structural equality: attributes, supports and relation graph; raw coordinates are ignored."""
    if a.slots != b.slots:
        return False
    for oa, ob in zip(a.objects, b.objects):
        if oa.support != ob.support:
            return False
        if any(oa.attr(n) != ob.attr(n) for n in ATTRIBUTE_NAMES):
            return False
    return derive_relations(a) == derive_relations(b)


# -- JSON document ---------------------------------------------------------


class SceneFormatError(ValueError):
    """Malformed scene document."""

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class SceneValidationError(ValueError):
    """Well-formed document describing an invalid scene."""

    def __init__(self, violations: list[Violation], location: str = ""):
        self.violations = violations
        self.location = location
        msg = "; ".join(str(v) for v in violations)
        super().__init__(f"{location}: {msg}" if location else msg)


def _object_text(o: ObjectNode) -> str:
    support = '"ground"' if o.support is GROUND else str(o.support)
    return (
        f'{{"slot":{o.slot},"color":"{o.color}","shape":"{o.shape}","size":"{o.size}",'
        f'"material":"{o.material}","x":{o.x:.6f},"y":{o.y:.6f},"support":{support}}}'
    )


def serialize(scene: SceneGraph) -> str:
    return '{"objects":[' + ",".join(_object_text(o) for o in scene.objects) + "]}"


def scene_to_dict(scene: SceneGraph) -> dict:
    return json.loads(serialize(scene))


_FIELDS = ("slot", "color", "shape", "size", "material", "x", "y", "support")


def scene_from_dict(doc, n_max: int = N_MAX, location: str = "") -> SceneGraph:
    if not isinstance(doc, dict) or not isinstance(doc.get("objects"), list):
        raise SceneFormatError('expected {"objects": [...]}', location)
    nodes = []
    for i, item in enumerate(doc["objects"]):
        loc = f"{location}objects[{i}]"
        if not isinstance(item, dict):
            raise SceneFormatError("object entry must be a mapping", loc)
        missing = [f for f in _FIELDS if f not in item]
        if missing:
            raise SceneFormatError(f"missing fields {missing}", loc)
        slot = item["slot"]
        if not isinstance(slot, int) or isinstance(slot, bool):
            raise SceneFormatError("slot must be an integer", loc)
        for name in ("x", "y"):
            if not isinstance(item[name], (int, float)) or isinstance(item[name], bool):
                raise SceneFormatError(f"{name} must be a number", loc)
        support = item["support"]
        if support == "ground":
            support = GROUND
        elif not isinstance(support, int) or isinstance(support, bool):
            raise SceneFormatError('support must be "ground" or a slot id', loc)
        for name in ATTRIBUTE_NAMES:
            if not isinstance(item[name], str):
                raise SceneFormatError(f"{name} must be a string", loc)
        nodes.append(ObjectNode(slot, item["color"], item["shape"], item["size"], item["material"],
                                float(item["x"]), float(item["y"]), support))
    scene = SceneGraph(tuple(nodes), n_max)
    problems = validate(scene)
    if problems:
        raise SceneValidationError(problems, location or "scene")
    return scene


def deserialize(text: str, n_max: int = N_MAX) -> SceneGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(exc.msg, f"line {exc.lineno} col {exc.colno}") from None
    return scene_from_dict(doc, n_max)


__all__ = [
    "ATTRIBUTES", "ATTRIBUTE_NAMES", "COLORS", "GROUND", "MATERIALS", "MIN_SEP", "N_MAX",
    "ObjectNode", "PLANAR_RELATIONS", "RELATIONS", "RelationGraph", "SHAPES", "SIZES",
    "SceneFormatError", "SceneGraph", "SceneValidationError", "Violation", "canonical_coord",
    "derive_relations", "deserialize", "scene_from_dict", "scene_to_dict",
    "scenes_equivalent", "serialize", "stack_root", "validate",
]
