"""Axis-aligned kd-tree for exact small-scale nearest neighbor routing.

Splits are on the widest-spread axis at the distinct value closest to the
count median, so duplicated coordinates can never produce an empty side.
Search is exact branch-and-bound: a subtree is pruned only when the
separating plane is strictly farther than the current worst kept distance,
which preserves the (distance, index) tie order of a full scan.
"""

from __future__ import annotations

import heapq
import time

import numpy as np

from .core import SearchStats, as_matrix, as_vector, check_dim

_TAG_LEAF = 0
_TAG_SPLIT = 1


class KdSplit:
    __slots__ = ("axis", "value", "left", "right")

    def __init__(self, axis: int, value: float):
        self.axis = axis
        self.value = value
        self.left = None
        self.right = None


class KdLeaf:
    __slots__ = ("rows",)

    def __init__(self, rows: np.ndarray):
        self.rows = rows


class KdTree:
    __slots__ = ("root", "points", "leaf_size")

    def __init__(self, root, points: np.ndarray, leaf_size: int):
        self.root = root
        self.points = points
        self.leaf_size = leaf_size

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return int(self.points.shape[0])


def build_kdtree(points, leaf_size: int = 16) -> KdTree:
    pts = as_matrix(points, name="points")
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    if leaf_size < 1:
        raise ValueError("leaf_size must be positive")

    def grow(rows: np.ndarray) -> object:
        if rows.size <= leaf_size:
            return KdLeaf(rows)
        block = pts[rows]
        spans = block.max(axis=0) - block.min(axis=0)
        axis = int(np.argmax(spans))
        if spans[axis] <= 0:
            # Every remaining point is identical; cannot split further.
            return KdLeaf(rows)
        coords = block[:, axis]
        sorted_vals = np.sort(coords)
        boundaries = np.nonzero(np.diff(sorted_vals))[0]
        left_counts = boundaries + 1
        pick = int(np.argmin(np.abs(left_counts - rows.size / 2.0)))
        value = float(sorted_vals[boundaries[pick]])
        mask = coords <= value
        node = KdSplit(axis=axis, value=value)
        node.left = grow(rows[mask])
        node.right = grow(rows[~mask])
        return node

    return KdTree(root=grow(np.arange(pts.shape[0], dtype=np.int64)),
                  points=pts, leaf_size=leaf_size)


def kdtree_search(tree: KdTree, query,
                  n_probe: int) -> tuple[np.ndarray, SearchStats]:
    """Exact ``n_probe`` nearest row indices, ties by ascending index."""
    if n_probe < 1:
        raise ValueError("n_probe must be positive")
    start = time.perf_counter()
    q = as_vector(query, name="query")
    check_dim(tree.dim, q.size)
    stats = SearchStats()
    points = tree.points
    # Max-heap over (distance, row) via negated entries; heap[0] is the
    # current worst kept candidate.
    heap: list[tuple[float, int]] = []

    def visit(node) -> None:
        stats.nodes_visited += 1
        if isinstance(node, KdLeaf):
            stats.leaves_probed += 1
            block = points[node.rows] - q
            d2 = np.einsum("ij,ij->i", block, block)
            stats.distance_computations += int(node.rows.size)
            for offset in np.argsort(d2, kind="stable"):
                row = int(node.rows[offset])
                item = (-float(d2[offset]), -row)
                if len(heap) < n_probe:
                    heapq.heappush(heap, item)
                elif (d2[offset], row) < (-heap[0][0], -heap[0][1]):
                    heapq.heapreplace(heap, item)
            return
        gap = float(q[node.axis]) - node.value
        near, far = (node.left, node.right) if gap <= 0 else (node.right, node.left)
        visit(near)
        if len(heap) < n_probe or gap * gap <= -heap[0][0]:
            visit(far)

    visit(tree.root)
    kept = sorted((-d2, -row) for d2, row in heap)
    indices = np.array([row for _, row in kept], dtype=np.int64)
    stats.wall_time = time.perf_counter() - start
    return indices, stats


def serialize_kdtree(tree: KdTree) -> bytes:
    from .serial import ByteWriter, KIND_KDTREE, write_header

    w = ByteWriter()
    write_header(w, KIND_KDTREE)
    w.u32(tree.dim)
    w.u32(tree.leaf_size)
    w.u64(len(tree))
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if isinstance(node, KdSplit):
            w.u8(_TAG_SPLIT)
            w.u32(node.axis)
            w.f64(node.value)
            stack.append(node.right)
            stack.append(node.left)
        else:
            w.u8(_TAG_LEAF)
            w.u32(int(node.rows.size))
            w.array(node.rows, "<u4")
    return w.getvalue()


def deserialize_kdtree(data: bytes, points) -> KdTree:
    from .serial import ByteReader, KIND_KDTREE, SerializationError, read_header

    pts = as_matrix(points, name="points")
    r = ByteReader(data)
    read_header(r, KIND_KDTREE)
    dim = r.u32()
    leaf_size = r.u32()
    n = r.u64()
    if pts.shape != (n, dim):
        raise SerializationError(
            f"tree was built over shape ({n}, {dim}), points have "
            f"{pts.shape}"
        )
    root_slot: list = [None]
    stack = [(root_slot, "")]
    while stack:
        holder, side = stack.pop()
        tag = r.u8()
        if tag == _TAG_SPLIT:
            node = KdSplit(axis=r.u32(), value=r.f64())
            stack.append((node, "right"))
            stack.append((node, "left"))
        elif tag == _TAG_LEAF:
            count = r.u32()
            node = KdLeaf(rows=r.array(count, "<u4").astype(np.int64))
        else:
            raise SerializationError(f"unknown node tag {tag}")
        if holder is root_slot:
            root_slot[0] = node
        else:
            setattr(holder, side, node)
    r.expect_end()
    return KdTree(root=root_slot[0], points=pts, leaf_size=leaf_size)
