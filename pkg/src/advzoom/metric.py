"""Action-space geometry.

Two hierarchies are provided:

* the dyadic cube tree over [0,1]^d under the sup metric, where a node of
  height h is an axis-parallel cube of side 2**-h and its 2^d children are
  its quadrants;
* a zooming DAG over an arbitrary finite metric space, built level by level
  from greedy coverings, for use when the action set is not a cube.

Plus the covering utilities both constructions rest on: greedy epsilon-covers
and a brute-force doubling-constant estimate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rng import fnv1a64, uniform

# --------------------------------------------------------------------------
# Cube tree
# --------------------------------------------------------------------------

# A cube node id is (height, cell), where cell[j] in [0, 2**height) indexes
# the dyadic cell along axis j.  Ids are stable across runs and hashable.
CubeId = tuple


@dataclass(frozen=True)
class CubeNode:
    """Axis-parallel dyadic cube: side 2**-height, sup-diameter = side."""

    node_id: CubeId
    center: tuple
    half_width: float
    height: int
    parent: Optional[CubeId] = None
    quadrant_index: int = 0

    @property
    def diameter(self) -> float:
        return 2.0 * self.half_width

    @property
    def dim(self) -> int:
        return len(self.center)

    def low_corner(self) -> tuple:
        return tuple(c - self.half_width for c in self.center)

    def n_children(self) -> int:
        return 1 << self.dim


def cube_root(d: int) -> CubeNode:
    """Root cube [0,1]^d: height 0, diameter 1."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return CubeNode(
        node_id=(0, (0,) * d),
        center=(0.5,) * d,
        half_width=0.5,
        height=0,
    )


def cube_children(u: CubeNode) -> list:
    """The 2^d quadrants of u, each of half the side, heights h(u)+1.

    Quadrant q uses bit j of q to pick the low (0) or high (1) half along
    axis j; children ordered by q, which fixes activation order downstream.
    """
    d = u.dim
    h = u.half_width / 2.0
    _, cell = u.node_id
    children = []
    for q in range(1 << d):
        bits = tuple((q >> j) & 1 for j in range(d))
        center = tuple(c + (h if b else -h) for c, b in zip(u.center, bits))
        child_cell = tuple(2 * cell[j] + bits[j] for j in range(d))
        children.append(
            CubeNode(
                node_id=(u.height + 1, child_cell),
                center=center,
                half_width=h,
                height=u.height + 1,
                parent=u.node_id,
                quadrant_index=q,
            )
        )
    return children


def cube_level(d: int, height: int) -> list:
    """All 2**(d*height) cube nodes at the given height."""
    nodes = [cube_root(d)]
    for _ in range(height):
        nodes = [v for u in nodes for v in cube_children(u)]
    return nodes


REPR_POLICIES = ("center", "low_endpoint", "seeded_uniform")


def representative(u, policy: str = "center", seed: int = 0) -> tuple:
    """Fixed data-independent arm inside node u.

    For cube nodes: the cube center, the low corner (the natural choice for
    posted prices, where only downward deviations are safe), or a uniform
    draw keyed by (seed, node id) so it never depends on observations.
    DAG nodes always use their ball center.
    """
    if isinstance(u, DagNode):
        return u.arm
    if policy == "center":
        return u.center
    if policy == "low_endpoint":
        return u.low_corner()
    if policy == "seeded_uniform":
        key = fnv1a64(f"repr:{seed}:{u.node_id}")
        us = uniform(key, np.arange(u.dim))
        lo = u.low_corner()
        return tuple(lo[j] + 2.0 * u.half_width * us[j] for j in range(u.dim))
    raise ValueError(f"unknown representative policy {policy!r}")


# --------------------------------------------------------------------------
# Finite metric spaces
# --------------------------------------------------------------------------


class FiniteMetricSpace:
    """Finite point set with an explicit distance matrix.

    Symmetry, zero diagonal, nonnegativity and the triangle inequality are
    checked on construction; diameter must be <= 1 (pass normalize=True to
    rescale instead of rejecting).
    """

    def __init__(self, points: Sequence, dist, normalize: bool = False):
        dist = np.asarray(dist, dtype=np.float64)
        n = len(points)
        if n == 0:
            raise ValueError("empty metric space")
        if dist.shape != (n, n):
            raise ValueError(f"distance matrix shape {dist.shape} != ({n}, {n})")
        if np.any(dist < 0):
            raise ValueError("negative distances")
        if np.any(np.diag(dist) != 0):
            raise ValueError("nonzero diagonal")
        if not np.array_equal(dist, dist.T):
            raise ValueError("distance matrix not symmetric")
        # min over k of d(i,k)+d(k,j) must not beat d(i,j)
        via = np.min(dist[:, :, None] + dist[None, :, :], axis=1)
        if np.any(via < dist - 1e-12):
            i, j = np.unravel_index(np.argmin(via - dist), dist.shape)
            raise ValueError(
                f"triangle inequality violated at pair ({i}, {j}): "
                f"d={dist[i, j]:.6g} > best detour {via[i, j]:.6g}"
            )
        diam = float(dist.max())
        if diam > 1.0:
            if not normalize:
                raise ValueError(f"diameter {diam:.6g} > 1; pass normalize=True")
            dist = dist / diam
        self.points = list(points)
        self.dist = dist

    def __len__(self) -> int:
        return len(self.points)

    @property
    def diameter(self) -> float:
        return float(self.dist.max())

    @classmethod
    def from_file(cls, path, points=None, normalize: bool = False):
        """Load from text: first line n, then n rows of n distances."""
        with open(path) as f:
            tokens = f.read().split()
        if not tokens:
            raise ValueError(f"{path}: empty file")
        n = int(tokens[0])
        vals = [float(v) for v in tokens[1:]]
        if len(vals) != n * n:
            raise ValueError(f"{path}: expected {n * n} distances, got {len(vals)}")
        dist = np.array(vals).reshape(n, n)
        if points is None:
            points = list(range(n))
        return cls(points, dist, normalize=normalize)


def greedy_cover(space: FiniteMetricSpace, eps: float) -> list:
    """Greedy eps-covering: ball centers (point indices), radius eps/2.

    Scans uncovered points in ascending index order, so output is
    deterministic.  Guarantees every point lies within eps/2 of a returned
    center, and centers are pairwise more than eps/2 apart.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = len(space)
    covered = np.zeros(n, dtype=bool)
    centers = []
    for i in range(n):
        if not covered[i]:
            centers.append(i)
            covered |= space.dist[i] <= eps / 2.0
    return centers


# --------------------------------------------------------------------------
# Zooming DAG
# --------------------------------------------------------------------------


@dataclass
class DagNode:
    """Ball node of the zooming DAG: radius 2**-height around a center point."""

    node_id: tuple  # (height, center point index)
    center_point: int
    height: int
    action_radius: float
    arm: object  # the center's point value, played as the representative
    ball: frozenset = frozenset()  # point indices within action_radius
    children: list = field(default_factory=list)  # child node ids
    parents: list = field(default_factory=list)

    def n_children(self) -> int:
        return len(self.children)


@dataclass
class ZoomingDag:
    space: FiniteMetricSpace
    max_height: int
    nodes: dict  # node id -> DagNode
    levels: list  # levels[h] = list of node ids

    @property
    def root_id(self):
        return self.levels[0][0]


def build_zooming_dag(space: FiniteMetricSpace, max_height: int) -> ZoomingDag:
    """Level-by-level DAG construction.

    Level h is a greedy (2r)-cover of the space with r = 2**-h, so its balls
    of radius r cover everything and their centers are > r apart.  Children
    of u are all next-level nodes whose balls share a point with B(u); this
    yields the covering (a), overlap (b) and separation (c) properties
    checked by check_dag_properties.
    """
    if max_height < 0:
        raise ValueError("max_height must be >= 0")
    levels = []
    nodes = {}
    for h in range(max_height + 1):
        r = 2.0 ** -h
        centers = greedy_cover(space, 2.0 * r)
        level = []
        for c in centers:
            nid = (h, c)
            ball = frozenset(np.flatnonzero(space.dist[c] <= r).tolist())
            nodes[nid] = DagNode(
                node_id=nid,
                center_point=c,
                height=h,
                action_radius=r,
                arm=space.points[c],
                ball=ball,
            )
            level.append(nid)
        levels.append(level)
    for h in range(max_height):
        for uid in levels[h]:
            u = nodes[uid]
            for vid in levels[h + 1]:
                v = nodes[vid]
                if u.ball & v.ball:
                    u.children.append(vid)
                    v.parents.append(uid)
    if len(levels[0]) != 1:
        # a (2*1)-cover of a diameter-<=1 space is a single ball
        raise AssertionError("root level should be a single node")
    return ZoomingDag(space=space, max_height=max_height, nodes=nodes, levels=levels)


def check_dag_properties(dag: ZoomingDag) -> list:
    """Exhaustively verify properties (a)-(c); returns human-readable failures."""
    bad = []
    space = dag.space
    for h, level in enumerate(dag.levels):
        r = 2.0 ** -h
        for uid in level:
            u = dag.nodes[uid]
            if h < dag.max_height:
                covered = set()
                for vid in u.children:
                    covered |= dag.nodes[vid].ball
                if not u.ball <= covered:
                    bad.append(f"(a) ball of {uid} not covered by children")
                for vid in u.children:
                    if not (u.ball & dag.nodes[vid].ball):
                        bad.append(f"(b) {uid} does not overlap child {vid}")
        for i, uid in enumerate(level):
            for vid in level[i + 1:]:
                a = dag.nodes[uid].center_point
                b = dag.nodes[vid].center_point
                if space.dist[a, b] <= r:
                    bad.append(f"(c) same-radius centers {uid},{vid} within {r}")
    return bad


def action_span_radius(dag: ZoomingDag, node_id) -> float:
    """Max distance from a node's center to any point in its sub-DAG balls."""
    u = dag.nodes[node_id]
    seen = set()
    stack = [node_id]
    pts = set()
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        pts |= dag.nodes[nid].ball
        stack.extend(dag.nodes[nid].children)
    return float(max(dag.space.dist[u.center_point][p] for p in pts))


# --------------------------------------------------------------------------
# Doubling constant
# --------------------------------------------------------------------------


@dataclass
class DoublingReport:
    """Smallest-cover-size estimate; exact=False marks a greedy upper bound."""

    value: int
    exact: bool

    def __int__(self) -> int:
        return self.value


_EXACT_LIMIT = 12  # exact minimum set cover only up to this many candidates


def _grow_half_diameter_set(dist, members, start, half):
    """Grow a maximal diameter-<=half subset of `members` from `start`,
    scanning members in ascending order (deterministic)."""
    maxd = dist[start].copy()
    taken = [start]
    for q in members:
        if q != start and maxd[q] <= half + 1e-12:
            taken.append(q)
            maxd = np.maximum(maxd, dist[q])
    return frozenset(taken)


def _ball_cover_count(dist, members):
    """Cover `members` by sets of at most half their diameter.

    Returns (count, exact).  Candidates are greedily grown maximal sets from
    each member; exact minimum cover is searched when there are at most
    _EXACT_LIMIT distinct candidates, otherwise the greedy count stands.
    """
    sub = dist[np.ix_(members, members)]
    diam = float(sub.max())
    if diam == 0.0:
        return 1, True
    half = diam / 2.0
    candidates = []
    seen = set()
    for p in members:
        s = _grow_half_diameter_set(dist, members, p, half)
        if s not in seen:
            seen.add(s)
            candidates.append(s)
    # greedy: repeatedly take the grown set of the lowest uncovered member
    uncovered = set(members)
    greedy_count = 0
    while uncovered:
        p = min(uncovered)
        uncovered -= _grow_half_diameter_set(dist, members, p, half)
        greedy_count += 1
    if len(candidates) > _EXACT_LIMIT:
        return greedy_count, False
    universe = set(members)
    for k in range(1, len(candidates) + 1):
        if k >= greedy_count:
            break
        for combo in itertools.combinations(candidates, k):
            if set().union(*combo) >= universe:
                return k, True
    return greedy_count, True


def doubling_constant(space: FiniteMetricSpace) -> DoublingReport:
    """Brute-force doubling constant of a small finite space.

    Every ball (all centers, all radii present in the distance matrix) must
    be coverable by `value` sets of at most half the ball's diameter.  Greedy
    covers make this an upper bound unless every ball admitted the exact
    search; the report says which.
    """
    dist = space.dist
    n = len(space)
    best = 1
    all_exact = True
    seen_balls = set()
    for i in range(n):
        for r in np.unique(dist[i]):
            members = tuple(np.flatnonzero(dist[i] <= r).tolist())
            if len(members) < 2 or members in seen_balls:
                continue
            seen_balls.add(members)
            count, exact = _ball_cover_count(dist, list(members))
            best = max(best, count)
            all_exact = all_exact and exact
    return DoublingReport(value=best, exact=all_exact)
