"""Typed functional programs over scene-graphs and their exact executor.

Programs are trees of :class:`Q` nodes, e.g.::

    count(filter_color(filter_material(scene(), metal), red))

String arguments (attribute values, relation names) are plain ``str`` leaves.
"""

from __future__ import annotations

from dataclasses import dataclass

from .scene import ATTRIBUTE_NAMES, ATTRIBUTES, COLORS, MATERIALS, SHAPES, SIZES, RELATIONS, SceneGraph, derive_relations

ANSWERS: tuple[str, ...] = (
    tuple(str(d) for d in range(10))
    + ("yes", "no")
    + SHAPES
    + SIZES
    + MATERIALS
    + COLORS
)
_ANSWER_INDEX = {a: i for i, a in enumerate(ANSWERS)}
MAX_COUNT = 9


def answer_index(answer: str) -> int:
    try:
        return _ANSWER_INDEX[answer]
    except KeyError:
        raise ValueError(f"{answer!r} is not in the answer vocabulary") from None


def index_answer(i: int) -> str:
    if not 0 <= i < len(ANSWERS):
        raise IndexError(f"answer index {i} outside [0, {len(ANSWERS)})")
    return ANSWERS[i]


class QuestionError(ValueError):
    pass


class QuestionTypeError(QuestionError):
    pass


class UniqueViolation(QuestionError):
    pass


@dataclass(frozen=True)
class Q:
    fn: str
    args: tuple = ()

    def __str__(self) -> str:
        return f"{self.fn}({','.join(str(a) for a in self.args)})"

    def to_dict(self) -> dict:
        return {"fn": self.fn, "args": [a.to_dict() if isinstance(a, Q) else a for a in self.args]}

    @classmethod
    def from_dict(cls, d) -> "Q":
        if not isinstance(d, dict) or "fn" not in d:
            raise QuestionTypeError(f"not a program node: {d!r}")
        return cls(d["fn"], tuple(cls.from_dict(a) if isinstance(a, dict) else a for a in d.get("args", [])))


def q(fn: str, *args) -> Q:
    return Q(fn, tuple(args))


# value types
SET, OBJ, INT, BOOL = "set", "object", "integer", "boolean"
ATTR = {name: f"attr:{name}" for name in ATTRIBUTE_NAMES}
LIT = {name: f"literal:{name}" for name in ATTRIBUTE_NAMES}
LIT_REL = "literal:relation"

SIGNATURES: dict[str, tuple[tuple[str, ...], str]] = {
    "scene": ((), SET),
    "unique": ((SET,), OBJ),
    "relate": ((OBJ, LIT_REL), SET),
    "count": ((SET,), INT),
    "exist": ((SET,), BOOL),
    "equal_integer": ((INT, INT), BOOL),
    "greater_than": ((INT, INT), BOOL),
    "less_than": ((INT, INT), BOOL),
    "union": ((SET, SET), SET),
    "intersect": ((SET, SET), SET),
    "negate_filter": ((SET, SET), SET),
}
for _name in ATTRIBUTE_NAMES:
    SIGNATURES[f"filter_{_name}"] = ((SET, LIT[_name]), SET)
    SIGNATURES[f"query_{_name}"] = ((OBJ,), ATTR[_name])
    SIGNATURES[f"same_{_name}"] = ((OBJ,), SET)
    SIGNATURES[f"equal_{_name}"] = ((ATTR[_name], ATTR[_name]), BOOL)

TWO_HOP_FNS = frozenset({"union", "intersect", "negate_filter"})


def type_of(node) -> str:
    """Type-check ``node`` recursively and return its value type."""
    if isinstance(node, str):
        raise QuestionTypeError(f"bare literal {node!r} outside an argument position")
    if not isinstance(node, Q):
        raise QuestionTypeError(f"not a program node: {node!r}")
    if node.fn not in SIGNATURES:
        raise QuestionTypeError(f"unknown function {node.fn!r}")
    params, ret = SIGNATURES[node.fn]
    if len(node.args) != len(params):
        raise QuestionTypeError(f"{node.fn} takes {len(params)} arguments, got {len(node.args)}")
    for arg, want in zip(node.args, params):
        if want.startswith("literal:"):
            kind = want.split(":", 1)[1]
            allowed = RELATIONS if kind == "relation" else ATTRIBUTES[kind]
            if not isinstance(arg, str) or arg not in allowed:
                raise QuestionTypeError(f"{node.fn} expects a {kind} literal, got {arg!r}")
        else:
            got = type_of(arg)
            if got != want:
                raise QuestionTypeError(f"{node.fn} expects {want}, got {got} from {arg}")
    return ret


def execute_question(scene: SceneGraph, program: Q) -> str:
    """Run ``program`` on ``scene`` and return the answer string."""
    ret = type_of(program)
    if ret in (SET, OBJ):
        raise QuestionTypeError(f"program returns a {ret}, not an answer")
    value = _Executor(scene).run(program)
    if ret == INT:
        return str(min(value, MAX_COUNT))
    if ret == BOOL:
        return "yes" if value else "no"
    return value


def select(scene: SceneGraph, program: Q) -> frozenset:
    """Evaluate a set-valued program to its selected slots."""
    if type_of(program) != SET:
        raise QuestionTypeError("select() needs a set-valued program")
    return _Executor(scene).run(program)


class _Executor:
    def __init__(self, scene: SceneGraph):
        self.scene = scene
        self.by_slot = {o.slot: o for o in scene.objects}
        self._relations = None

    @property
    def relations(self):
        if self._relations is None:
            self._relations = derive_relations(self.scene)
        return self._relations

    def run(self, node: Q):
        fn, args = node.fn, node.args
        if fn == "scene":
            return frozenset(self.by_slot)
        if fn.startswith("filter_"):
            attr = fn[len("filter_"):]
            return frozenset(s for s in self.run(args[0]) if self.by_slot[s].attr(attr) == args[1])
        if fn == "unique":
            objs = self.run(args[0])
            if len(objs) != 1:
                raise UniqueViolation(f"unique() over {len(objs)} objects in {node}")
            return next(iter(objs))
        if fn == "relate":
            return frozenset(self.relations.related(args[1], self.run(args[0])))
        if fn == "count":
            return len(self.run(args[0]))
        if fn == "exist":
            return len(self.run(args[0])) > 0
        if fn.startswith("query_"):
            return self.by_slot[self.run(args[0])].attr(fn[len("query_"):])
        if fn.startswith("same_"):
            attr = fn[len("same_"):]
            me = self.run(args[0])
            v = self.by_slot[me].attr(attr)
            return frozenset(s for s, o in self.by_slot.items() if s != me and o.attr(attr) == v)
        if fn.startswith("equal_") and fn != "equal_integer":
            return self.run(args[0]) == self.run(args[1])
        if fn == "equal_integer":
            return self.run(args[0]) == self.run(args[1])
        if fn == "greater_than":
            return self.run(args[0]) > self.run(args[1])
        if fn == "less_than":
            return self.run(args[0]) < self.run(args[1])
        if fn == "union":
            return self.run(args[0]) | self.run(args[1])
        if fn == "intersect":
            return self.run(args[0]) & self.run(args[1])
        if fn == "negate_filter":
            return self.run(args[0]) - self.run(args[1])
        raise QuestionTypeError(f"unknown function {fn!r}")


def parse_program(text: str) -> Q:
    """Parse the compact form ``count(filter_color(scene(),red))``."""
    pos = 0
    text = text.replace(" ", "")

    def ident():
        nonlocal pos
        start = pos
        while pos < len(text) and (text[pos].isalnum() or text[pos] == "_"):
            pos += 1
        if start == pos:
            raise QuestionTypeError(f"expected a name at offset {start} in {text!r}")
        return text[start:pos]

    def node():
        nonlocal pos
        name = ident()
        if pos < len(text) and text[pos] == "(":
            pos += 1
            args = []
            if text[pos] != ")":
                while True:
                    args.append(node())
                    if text[pos] == ",":
                        pos += 1
                        continue
                    break
            if text[pos] != ")":
                raise QuestionTypeError(f"expected ')' at offset {pos} in {text!r}")
            pos += 1
            return Q(name, tuple(args))
        return name

    try:
        out = node()
    except IndexError:
        raise QuestionTypeError(f"unexpected end of program {text!r}") from None
    if pos != len(text) or not isinstance(out, Q):
        raise QuestionTypeError(f"trailing input in {text!r}")
    type_of(out)
    return out
