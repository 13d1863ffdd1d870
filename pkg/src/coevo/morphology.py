"""Agent designs: rooted trees of joints with normalized attribute vectors.

A design is a tree whose nodes are joints and whose edges are bones. Every
node carries five attributes, each normalized to [-1, 1]:

    attrs = [bone angle, bone length, bone size, motor gear, joint range]

The head (the unique root) ignores its bone attributes; its children hinge
directly on the head body. Designs are immutable: mutation returns a new
tree and never touches its input, and invalid edits (deleting the head,
deleting an internal joint, adding to a full joint) are softly rejected so
that any action sequence keeps the design valid.
"""

import json
from dataclasses import dataclass, field

import numpy as np

N_ATTRS = 5
SCHEMA_VERSION = 1

# topology choices, one per node per action
ADD_JOINT = 0
DEL_JOINT = 1
NO_CHANGE = 2
TOPOLOGY_CHOICES = 3


class MorphologyError(ValueError):
    """A structurally impossible request (not a soft rejection)."""


class SchemaError(ValueError):
    """A serialized design document that does not match the schema."""


@dataclass(frozen=True)
class JointNode:
    id: int
    parent: int | None           # None marks the head
    attrs: np.ndarray            # shape (5,), values in [-1, 1]

    def __post_init__(self):
        object.__setattr__(self, "attrs", np.asarray(self.attrs, dtype=np.float64).copy())


class Morphology:
    """An immutable rooted joint tree, nodes kept in increasing-id order."""

    def __init__(self, nodes):
        nodes = sorted(nodes, key=lambda n: n.id)
        self._nodes = tuple(nodes)
        self._by_id = {n.id: n for n in nodes}
        self._children = {n.id: [] for n in nodes}
        for n in nodes:
            if n.parent is not None and n.parent in self._children:
                self._children[n.parent].append(n.id)

    # -- structure accessors -------------------------------------------------

    @property
    def nodes(self):
        return self._nodes

    def __len__(self):
        return len(self._nodes)

    def node(self, node_id):
        return self._by_id[node_id]

    def children(self, node_id):
        return tuple(self._children[node_id])

    def head(self):
        for n in self._nodes:
            if n.parent is None:
                return n
        raise MorphologyError("design has no head")

    def ids(self):
        return [n.id for n in self._nodes]

    def is_leaf(self, node_id):
        return len(self._children[node_id]) == 0

    def attr_matrix(self):
        """Attributes stacked in canonical (id-sorted) node order, shape (n, 5)."""
        return np.stack([n.attrs for n in self._nodes])

    def adjacency(self):
        """Symmetric 0/1 neighbor matrix in canonical node order (no self loops)."""
        n = len(self._nodes)
        index = {node.id: i for i, node in enumerate(self._nodes)}
        adj = np.zeros((n, n))
        for node in self._nodes:
            if node.parent is not None:
                i, j = index[node.id], index[node.parent]
                adj[i, j] = adj[j, i] = 1.0
        return adj

    def __eq__(self, other):
        if not isinstance(other, Morphology):
            return NotImplemented
        if self.ids() != other.ids():
            return False
        for a, b in zip(self._nodes, other._nodes):
            if a.parent != b.parent or not np.array_equal(a.attrs, b.attrs):
                return False
        return True

    def __repr__(self):
        return f"Morphology(n={len(self)}, ids={self.ids()})"


@dataclass
class MorphAction:
    """One joint-wise edit: a topology choice and an attribute delta per node.

    Arrays are indexed in the design's canonical node order.
    """

    topology: np.ndarray         # int, shape (n,), values in {ADD_JOINT, DEL_JOINT, NO_CHANGE}
    deltas: np.ndarray           # float, shape (n, 5)

    @classmethod
    def identity(cls, n):
        return cls(np.full(n, NO_CHANGE, dtype=np.int64), np.zeros((n, N_ATTRS)))


@dataclass
class ApplyInfo:
    added: int = 0
    deleted: int = 0
    rejected_add: int = 0
    rejected_del: int = 0
    action_cost: float = 0.0
    applied_delta_sq: float = 0.0


# ---------------------------------------------------------------------------
# construction and mutation
# ---------------------------------------------------------------------------

def initial_morphology(num_lv1, child_cap=3):
    """The starting agent: one head plus `num_lv1` level-1 joints, zero attrs."""
    if not (0 <= num_lv1 <= child_cap):
        raise MorphologyError(f"num_lv1 must be in [0, {child_cap}], got {num_lv1}")
    nodes = [JointNode(0, None, np.zeros(N_ATTRS))]
    for k in range(num_lv1):
        nodes.append(JointNode(k + 1, 0, np.zeros(N_ATTRS)))
    return Morphology(nodes)


def apply_morph_action(morph, action, node_cap=16, child_cap=3, delta_cap=0.1):
    """Apply a joint-wise edit and return (new design, ApplyInfo).

    Two passes over the original nodes in canonical order: topology first
    (adds and leaf deletions, softly rejecting anything that would break an
    invariant), then attribute deltas clipped to +-delta_cap and the result
    clipped back into [-1, 1]. The input design is never mutated.

    The reported action_cost is (accepted topology changes) + (squared norm
    of the applied deltas); it feeds the morphology reward's penalty term.
    """
    orig_ids = morph.ids()
    n = len(orig_ids)
    if action.topology.shape != (n,) or action.deltas.shape != (n, N_ATTRS):
        raise MorphologyError(
            f"action shaped for {action.topology.shape[0]} nodes, design has {n}")

    info = ApplyInfo()
    live = {node.id: node for node in morph.nodes}
    child_count = {node.id: len(morph.children(node.id)) for node in morph.nodes}
    parent_of = {node.id: node.parent for node in morph.nodes}
    next_id = max(orig_ids) + 1

    for i, node_id in enumerate(orig_ids):
        choice = int(action.topology[i])
        if choice == ADD_JOINT:
            if child_count[node_id] < child_cap and len(live) < node_cap:
                live[next_id] = JointNode(next_id, node_id, np.zeros(N_ATTRS))
                child_count[next_id] = 0
                parent_of[next_id] = node_id
                child_count[node_id] += 1
                next_id += 1
                info.added += 1
            else:
                info.rejected_add += 1
        elif choice == DEL_JOINT:
            if parent_of[node_id] is not None and child_count[node_id] == 0:
                child_count[parent_of[node_id]] -= 1
                del live[node_id], child_count[node_id], parent_of[node_id]
                info.deleted += 1
            else:
                info.rejected_del += 1

    orig_index = {node_id: i for i, node_id in enumerate(orig_ids)}
    new_nodes = []
    for node_id, node in live.items():
        i = orig_index.get(node_id)
        if i is None:
            new_nodes.append(node)   # freshly added joint keeps default attrs
            continue
        delta = np.clip(action.deltas[i], -delta_cap, delta_cap)
        info.applied_delta_sq += float(np.sum(delta * delta))
        attrs = np.clip(node.attrs + delta, -1.0, 1.0)
        new_nodes.append(JointNode(node.id, node.parent, attrs))

    info.action_cost = float(info.added + info.deleted) + info.applied_delta_sq
    return Morphology(new_nodes), info


def validate(morph, node_cap=16, child_cap=3):
    """Check all structural invariants; returns a list of violations (empty = ok)."""
    violations = []
    heads = [n for n in morph.nodes if n.parent is None]
    if len(heads) != 1:
        violations.append(f"expected exactly one head, found {len(heads)}")
    if len(morph) > node_cap:
        violations.append(f"node count {len(morph)} exceeds cap {node_cap}")
    ids = set(morph.ids())
    if len(ids) != len(morph):
        violations.append("duplicate node ids")
    for n in morph.nodes:
        if n.parent is not None and n.parent not in ids:
            violations.append(f"node {n.id}: parent {n.parent} does not exist")
        if n.attrs.shape != (N_ATTRS,):
            violations.append(f"node {n.id}: attrs must have {N_ATTRS} entries")
        elif not np.all(np.isfinite(n.attrs)):
            violations.append(f"node {n.id}: attrs not finite")
        elif np.any(np.abs(n.attrs) > 1.0 + 1e-12):
            violations.append(f"node {n.id}: attr out of [-1, 1]")
        if len(morph.children(n.id)) > child_cap:
            violations.append(f"node {n.id}: {len(morph.children(n.id))} children exceeds cap {child_cap}")
    # connectivity: walk from the head, everything must be reachable without cycles
    if len(heads) == 1:
        seen = set()
        stack = [heads[0].id]
        while stack:
            nid = stack.pop()
            if nid in seen:
                violations.append("cycle detected in parent links")
                break
            seen.add(nid)
            stack.extend(morph.children(nid))
        if seen != ids and not any("cycle" in v for v in violations):
            violations.append(f"{len(ids - seen)} node(s) unreachable from the head")
    return violations


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def to_dict(morph):
    return {
        "schema_version": SCHEMA_VERSION,
        "nodes": [
            {"id": n.id, "parent": n.parent, "attrs": [float(a) for a in n.attrs]}
            for n in morph.nodes
        ],
    }


def to_json(morph):
    return json.dumps(to_dict(morph), sort_keys=True)


def from_dict(doc):
    if not isinstance(doc, dict):
        raise SchemaError("$: document must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"$.schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    if "nodes" not in doc or not isinstance(doc["nodes"], list) or not doc["nodes"]:
        raise SchemaError("$.nodes: required non-empty array")
    nodes = []
    saw_head = False
    for i, rec in enumerate(doc["nodes"]):
        path = f"$.nodes[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(f"{path}: must be an object")
        for key in ("id", "parent", "attrs"):
            if key not in rec:
                raise SchemaError(f"{path}.{key}: required")
        if not isinstance(rec["id"], int):
            raise SchemaError(f"{path}.id: must be an integer")
        if rec["parent"] is not None and not isinstance(rec["parent"], int):
            raise SchemaError(f"{path}.parent: must be an integer or null")
        attrs = rec["attrs"]
        if not isinstance(attrs, list) or len(attrs) != N_ATTRS:
            raise SchemaError(f"{path}.attrs: must be an array of {N_ATTRS} numbers")
        try:
            attrs = np.array([float(a) for a in attrs])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}.attrs: {exc}") from exc
        if rec["parent"] is None:
            saw_head = True
        nodes.append(JointNode(rec["id"], rec["parent"], attrs))
    if not saw_head:
        raise SchemaError("$.nodes: no head (a node with parent = null) present")
    return Morphology(nodes)


def from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"$: invalid JSON: {exc}") from exc
    return from_dict(doc)


def roundtrip(morph):
    """Serialize and parse back; used to prove the schema is lossless."""
    return from_json(to_json(morph))
