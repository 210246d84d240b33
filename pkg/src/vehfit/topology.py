"""Mesh / wireframe / appearance-keypoint topology and its text file format.

File layout (one directive per line, ``#`` starts a comment)::

    vehicle-topology 1
    keypoints 144
    mirror i0 i1 ...            # mirrored counterpart of every keypoint
    appearance i ...            # appearance keypoint indices, in channel order
    group <name> i ...          # optional named index groups
    tri a b c                   # one mesh triangle per line
    wire <side> a b             # one wireframe edge, side in SIDES
"""

from dataclasses import dataclass, field

import numpy as np

SIDES = ("front", "back", "left", "right")
FORMAT_VERSION = 1


class TopologyError(ValueError):
    pass


@dataclass
class Topology:
    n_keypoints: int
    triangles: np.ndarray
    wireframe: dict
    appearance: np.ndarray
    mirror: np.ndarray
    groups: dict = field(default_factory=dict)

    def validate(self):
        n = self.n_keypoints
        arrays = [self.triangles, self.appearance, self.mirror, *self.wireframe.values(), *self.groups.values()]
        for arr in arrays:
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise TopologyError("topology index out of range")
        if set(self.wireframe) != set(SIDES):
            raise TopologyError(f"wireframe must define sides {SIDES}")
        if len(self.mirror) != n or not np.array_equal(self.mirror[self.mirror], np.arange(n)):
            raise TopologyError("mirror map must be an involution over all keypoints")
        return self

    def edges(self):
        """All distinct wireframe edges plus a (n_edges, 4) side-membership mask."""
        index = {}
        for w, side in enumerate(SIDES):
            for a, b in self.wireframe[side]:
                key = (int(a), int(b)) if a < b else (int(b), int(a))
                index.setdefault(key, np.zeros(len(SIDES), dtype=bool))[w] = True
        keys = sorted(index)
        return np.array(keys, dtype=np.int64).reshape(-1, 2), np.array([index[k] for k in keys]).reshape(-1, len(SIDES))


def write_topology(topo, path):
    lines = [f"vehicle-topology {FORMAT_VERSION}", f"keypoints {topo.n_keypoints}",
             "mirror " + " ".join(map(str, topo.mirror)),
             "appearance " + " ".join(map(str, topo.appearance))]
    for name, idx in topo.groups.items():
        lines.append(f"group {name} " + " ".join(map(str, idx)))
    lines += [f"tri {a} {b} {c}" for a, b, c in topo.triangles]
    for side in SIDES:
        lines += [f"wire {side} {a} {b}" for a, b in topo.wireframe[side]]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_topology(path):
    tris, wire, groups = [], {s: [] for s in SIDES}, {}
    n = mirror = app = None
    version = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].split()
            if not line:
                continue
            key, args = line[0], line[1:]
            try:
                if key == "vehicle-topology":
                    version = int(args[0])
                elif key == "keypoints":
                    n = int(args[0])
                elif key == "mirror":
                    mirror = [int(a) for a in args]
                elif key == "appearance":
                    app = [int(a) for a in args]
                elif key == "group":
                    groups[args[0]] = np.array([int(a) for a in args[1:]], dtype=np.int64)
                elif key == "tri":
                    tris.append(tuple(int(a) for a in args[:3]))
                elif key == "wire":
                    if args[0] not in wire:
                        raise TopologyError(f"line {lineno}: unknown side {args[0]!r}")
                    wire[args[0]].append((int(args[1]), int(args[2])))
                else:
                    raise TopologyError(f"line {lineno}: unknown directive {key!r}")
            except (IndexError, ValueError) as exc:
                if isinstance(exc, TopologyError):
                    raise
                raise TopologyError(f"line {lineno}: malformed {key!r} record") from exc
    if version != FORMAT_VERSION:
        raise TopologyError(f"unsupported topology version {version}")
    if n is None or mirror is None or app is None:
        raise TopologyError("topology file lacks keypoints/mirror/appearance")
    topo = Topology(
        n_keypoints=n,
        triangles=np.array(tris, dtype=np.int64).reshape(-1, 3),
        wireframe={k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in wire.items()},
        appearance=np.array(app, dtype=np.int64),
        mirror=np.array(mirror, dtype=np.int64),
        groups=groups,
    )
    return topo.validate()
