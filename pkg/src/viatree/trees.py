"""Finite leveled event trees.

An event tree is the discrete skeleton of a filtered probability space:
nodes are atoms of the filtration, edges carry one-step conditional
probabilities, and every leaf sits at the same terminal depth (the tree is
"leveled").  Nodes are indexed breadth-first from the root (node 0), so a
parent always has a smaller index than its children and each depth level
occupies a contiguous index range.

Unconditional node probabilities are derived from the conditional branch
probabilities on demand and never stored: the conditionals are the single
source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_SUM_TOL = 1e-12


class EventTree:
    """Leveled tree with conditional branch probabilities.

    Parameters
    ----------
    parent : sequence of int or None
        ``parent[i]`` is the index of node ``i``'s parent; the root entry
        (index 0) must be ``None`` (or ``-1``).  Parents must precede
        children and nodes must be grouped by depth (breadth-first order).
    branch_prob : sequence of float
        ``branch_prob[i]`` is the conditional probability of reaching node
        ``i`` from its parent.  The root entry must be 1.  Probabilities lie
        in (0, 1] and sum to 1 over each sibling group (within 1e-12).
    """

    def __init__(self, parent, branch_prob):
        par = np.asarray(
            [-1 if p is None else int(p) for p in parent], dtype=np.int64
        )
        bp = np.asarray(branch_prob, dtype=np.float64)
        n = par.size
        if n == 0:
            raise ValueError("tree must have at least a root node")
        if bp.shape != (n,):
            raise ValueError(
                f"branch_prob has shape {bp.shape}, expected ({n},)"
            )
        if par[0] != -1:
            raise ValueError("node 0 must be the root (parent None)")
        if n > 1 and np.any(par[1:] < 0):
            raise ValueError("only node 0 may be parentless")
        if np.any(par[1:] >= np.arange(1, n)):
            raise ValueError("parents must precede children (breadth-first order)")

        if not np.all(np.isfinite(bp)):
            raise ValueError("branch probabilities must be finite")
        if bp[0] != 1.0:
            raise ValueError("root branch probability must be exactly 1")
        if np.any(bp <= 0.0) or np.any(bp > 1.0):
            raise ValueError("branch probabilities must lie in (0, 1]")

        depth = np.zeros(n, dtype=np.int64)
        depth[1:] = 0
        for i in range(1, n):
            depth[i] = depth[par[i]] + 1
        if np.any(np.diff(depth) < 0):
            raise ValueError("nodes must be grouped by depth (breadth-first order)")

        children: list[list[int]] = [[] for _ in range(n)]
        for i in range(1, n):
            children[par[i]].append(i)
        child_arrays = [np.asarray(c, dtype=np.int64) for c in children]

        leaves = np.asarray(
            [i for i in range(n) if child_arrays[i].size == 0], dtype=np.int64
        )
        internal = np.asarray(
            [i for i in range(n) if child_arrays[i].size > 0], dtype=np.int64
        )
        horizon = int(depth.max())
        if np.any(depth[leaves] != horizon):
            raise ValueError("tree must be leveled: every leaf at the terminal depth")

        for v in internal:
            s = bp[child_arrays[v]].sum()
            if abs(s - 1.0) > PROB_SUM_TOL:
                raise ValueError(
                    f"branch probabilities out of node {v} sum to {s!r}, "
                    f"expected 1 within {PROB_SUM_TOL}"
                )

        self.parent = par
        self.branch_prob = bp
        self.n_nodes = n
        self.depth = depth
        self.horizon = horizon
        self.children = child_arrays
        self.leaves = leaves
        self.internal = internal

    def unconditional_probs(self) -> np.ndarray:
        """Node probabilities, derived by multiplying branch probabilities."""
        p = np.ones(self.n_nodes)
        for i in range(1, self.n_nodes):
            p[i] = p[self.parent[i]] * self.branch_prob[i]
        return p

    def path_to(self, node: int) -> list[int]:
        """Nodes from the root to ``node``, inclusive."""
        path = [int(node)]
        while self.parent[path[-1]] >= 0:
            path.append(int(self.parent[path[-1]]))
        return path[::-1]

    def level(self, d: int) -> np.ndarray:
        """Indices of the nodes at depth ``d``."""
        return np.nonzero(self.depth == d)[0]

    def n_children(self, v: int) -> int:
        return int(self.children[v].size)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"EventTree(n_nodes={self.n_nodes}, horizon={self.horizon}, "
            f"leaves={self.leaves.size})"
        )


@dataclass(frozen=True)
class StoppingTime:
    """A stopping time as a cut: every root-to-leaf path meets it exactly once."""

    nodes: tuple[int, ...]

    @classmethod
    def of(cls, tree: EventTree, nodes) -> "StoppingTime":
        cut = tuple(sorted(int(v) for v in nodes))
        if len(set(cut)) != len(cut):
            raise ValueError("stopping-time cut contains duplicate nodes")
        if any(v < 0 or v >= tree.n_nodes for v in cut):
            raise ValueError("stopping-time cut references unknown nodes")
        hits = np.zeros(tree.n_nodes, dtype=np.int64)
        cutset = set(cut)
        for i in range(tree.n_nodes):
            above = hits[tree.parent[i]] if tree.parent[i] >= 0 else 0
            hits[i] = above + (1 if i in cutset else 0)
        bad = [int(l) for l in tree.leaves if hits[l] != 1]
        if bad:
            raise ValueError(
                f"cut is not an exact antichain cover: leaves {bad[:5]} are "
                f"crossed {[int(hits[b]) for b in bad[:5]]} times"
            )
        return cls(cut)

    @classmethod
    def terminal(cls, tree: EventTree) -> "StoppingTime":
        return cls(tuple(int(v) for v in tree.leaves))


def crossed_by(tree: EventTree, cut: StoppingTime) -> np.ndarray:
    """Boolean per node: has the path to the node met the cut at or before it."""
    out = np.zeros(tree.n_nodes, dtype=bool)
    cutset = set(cut.nodes)
    for i in range(tree.n_nodes):
        above = out[tree.parent[i]] if tree.parent[i] >= 0 else False
        out[i] = above or (i in cutset)
    return out


def cuts_nested(tree: EventTree, earlier: StoppingTime, later: StoppingTime) -> bool:
    """True iff every path meets ``earlier`` no later than ``later``."""
    ce = crossed_by(tree, earlier)
    # Nested means: wherever the later cut is met, the earlier one was met
    # at that node or above it.
    return all(ce[v] for v in later.nodes)


def conditional_expectation(tree: EventTree, values: dict, at=0):
    """Condition values given on a cut down to an earlier node or cut.

    ``values`` maps node ids on some cut to floats.  ``at`` is a node index
    or a :class:`StoppingTime` lying weakly before that cut.  Returns a
    float (node target) or a dict over the target cut's nodes.
    """
    vals = {int(k): float(v) for k, v in values.items()}
    for v in range(tree.n_nodes - 1, -1, -1):
        kids = tree.children[v]
        if kids.size == 0 or v in vals:
            continue
        if all(int(c) in vals for c in kids):
            vals[v] = float(
                sum(tree.branch_prob[c] * vals[int(c)] for c in kids)
            )
    if isinstance(at, StoppingTime):
        missing = [v for v in at.nodes if v not in vals]
        if missing:
            raise ValueError(
                f"values do not determine the expectation at nodes {missing[:5]}: "
                "they must be given on a cut weakly later than the target"
            )
        return {v: vals[v] for v in at.nodes}
    at = int(at)
    if at not in vals:
        raise ValueError(
            f"values do not determine the expectation at node {at}: "
            "they must be given on a cut weakly later than the target"
        )
    return vals[at]
