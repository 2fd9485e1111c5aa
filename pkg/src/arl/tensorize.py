"""Slot-aligned vector encoding of scene-graphs and decoding of predicted logits.

Per-slot layout (F = 19 + n_max)::

    [exist | color x8 | shape x3 | size x2 | material x2 | x, y | support x (n_max + 1)]

The last support entry is GROUND. Slot i of the vector is slot i of the scene.
"""

from __future__ import annotations

import numpy as np

from .scene import ATTRIBUTE_NAMES, ATTRIBUTES, GROUND, N_MAX, SIZES, ObjectNode, SceneGraph, canonical_coord

EXIST = 0
GROUP_START = {}
_off = 1
for _name in ATTRIBUTE_NAMES:
    GROUP_START[_name] = _off
    _off += len(ATTRIBUTES[_name])
X, Y = _off, _off + 1
SUPPORT = _off + 2
del _off, _name

# lattice the generator and the placement rule both live on
COORD_QUANTUM = 0.05


def slot_width(n_max: int = N_MAX) -> int:
    return SUPPORT + n_max + 1


def categorical_groups(n_max: int = N_MAX) -> list[tuple[str, int, int]]:
    """(name, start, stop) of each categorical block inside one slot."""
    groups = [(n, GROUP_START[n], GROUP_START[n] + len(ATTRIBUTES[n])) for n in ATTRIBUTE_NAMES]
    groups.append(("support", SUPPORT, SUPPORT + n_max + 1))
    return groups


def encode_scene(scene: SceneGraph) -> np.ndarray:
    n_max = scene.n_max
    f = slot_width(n_max)
    out = np.zeros((n_max, f))
    for o in scene.objects:
        row = out[o.slot]
        row[EXIST] = 1.0
        for name in ATTRIBUTE_NAMES:
            row[GROUP_START[name] + ATTRIBUTES[name].index(o.attr(name))] = 1.0
        row[X], row[Y] = o.x, o.y
        row[SUPPORT + (n_max if o.support is GROUND else o.support)] = 1.0
    return out.reshape(-1)


def encode_batch(scenes) -> np.ndarray:
    return np.stack([encode_scene(s) for s in scenes])


def lift(tensor: np.ndarray, margin: float = 30.0, n_max: int = N_MAX) -> np.ndarray:
    """Logits whose discretization reproduces ``tensor``: one-hot entries get ``margin``."""
    t = np.asarray(tensor, dtype=float).reshape(n_max, slot_width(n_max))
    out = np.where(t > 0.5, margin, 0.0)
    out[:, EXIST] = np.where(t[:, EXIST] > 0.5, margin, -margin)
    out[:, X] = t[:, X]
    out[:, Y] = t[:, Y]
    return out.reshape(-1)


def _snap(v: float, quantum: float | None) -> float:
    v = min(1.0, max(0.0, float(v)))
    if quantum:
        v = round(v / quantum) * quantum
    return canonical_coord(v)


def discretize(logits: np.ndarray, n_max: int = N_MAX, quantum: float | None = COORD_QUANTUM) -> SceneGraph:
    """Turn decoder scores into a scene-graph.

    Existence by sign of the score, attributes and support by argmax (lowest
    index wins ties), coordinates clamped to [0, 1] and snapped to the
    placement lattice. Unsupportable supports are reset to GROUND; stacked
    objects take their root's position. Separation is not enforced.
    """
    z = np.asarray(logits, dtype=float).reshape(n_max, slot_width(n_max))
    exists = [i for i in range(n_max) if z[i, EXIST] > 0.0]
    rows = {}
    for i in exists:
        attrs = {}
        for name in ATTRIBUTE_NAMES:
            g = GROUP_START[name]
            attrs[name] = ATTRIBUTES[name][int(np.argmax(z[i, g:g + len(ATTRIBUTES[name])]))]
        sup = int(np.argmax(z[i, SUPPORT:SUPPORT + n_max + 1]))
        rows[i] = dict(attrs, x=_snap(z[i, X], quantum), y=_snap(z[i, Y], quantum),
                       support=GROUND if sup == n_max else sup)

    support = {i: r["support"] for i, r in rows.items()}
    for i in exists:
        if support[i] is not GROUND and (support[i] == i or support[i] not in rows):
            support[i] = GROUND
    for i in exists:  # break cycles at the slot where they are first detected
        chain, cur = [i], support[i]
        while cur is not GROUND:
            if cur in chain:
                support[i] = GROUND
                break
            chain.append(cur)
            cur = support[cur]
    for i in exists:
        s = support[i]
        if s is not GROUND and SIZES.index(rows[s]["size"]) < SIZES.index(rows[i]["size"]):
            support[i] = GROUND
    taken = set()
    for i in exists:
        s = support[i]
        if s is not GROUND:
            if s in taken:
                support[i] = GROUND
            else:
                taken.add(s)

    def root(i):
        while support[i] is not GROUND:
            i = support[i]
        return i

    objs = []
    for i in exists:
        r = rows[i]
        base = rows[root(i)]
        objs.append(ObjectNode(i, r["color"], r["shape"], r["size"], r["material"],
                               base["x"], base["y"], support[i]))
    return SceneGraph(tuple(objs), n_max)
