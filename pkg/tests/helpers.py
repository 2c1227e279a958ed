"""Independent reference implementations used as test oracles.

Everything here recomputes expected values by brute force (exhaustive
scans, nested loops, direct projective constructions) so the production
paths are checked against genuinely separate code.
"""

from __future__ import annotations

import numpy as np

from loopclose.bits import hamming_matrix
from loopclose.hamming_tree import HammingForest, HammingTree, iter_leaves
from loopclose.imgproc import FeatureSet


# ---------------------------------------------------------------------------
# Nearest neighbour / search oracles
# ---------------------------------------------------------------------------

def linear_nn_distances(queries: np.ndarray, corpus: np.ndarray) -> np.ndarray:
    """Exact nearest-neighbour distance of each query by full scan."""
    return hamming_matrix(queries, corpus).min(axis=1)


# ---------------------------------------------------------------------------
# Forest invariants
# ---------------------------------------------------------------------------

def check_forest_invariants(forest: HammingForest, leaf_capacity: int) -> None:
    """Walk every tree and assert the structural invariants."""
    live = set(forest.store.word_ids)
    for tree in forest.trees:
        seen: list[int] = []
        for leaf in iter_leaves(tree.root):
            assert len(leaf.ids) <= leaf_capacity, (
                f"leaf holds {len(leaf.ids)} > {leaf_capacity} words"
            )
            seen.extend(leaf.ids)
        assert len(seen) == len(set(seen)), "a word id appears in two leaves"
        assert set(seen) == live, "tree membership diverged from the store"
        assert tree.all_ids() == live, "leaf lookup table diverged"
        _check_internal_nodes(tree, live)


def _check_internal_nodes(tree: HammingTree, live: set[int]) -> None:
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            continue
        assert node.children, "internal node without children"
        for child in node.children:
            assert child.parent is node, "broken parent link"
            stack.append(child)
        if node is not tree.root:
            # A recorded centre word, while live, must sit in this subtree.
            if node.centre_word in live:
                subtree = {i for leaf in iter_leaves(node) for i in leaf.ids}
                assert node.centre_word in subtree, "centre word escaped its subtree"


# ---------------------------------------------------------------------------
# tf-idf scoring oracle
# ---------------------------------------------------------------------------

def brute_force_scores(vocab, matched_word_ids, exclude=()) -> dict[int, float]:
    """Linear tf-idf scan over every indexed image.

    Iterates images on the outside and words on the inside (the opposite
    of the production path) and recomputes tf denominators from the
    posting lists instead of trusting the vocabulary's running totals.
    """
    import math

    excluded = set(exclude)
    words = list(dict.fromkeys(matched_word_ids))
    n_images = vocab.num_images

    totals: dict[int, float] = {}
    for plist in vocab.postings.values():
        for image_id, count in plist:
            totals[image_id] = totals.get(image_id, 0) + count

    scores: dict[int, float] = {}
    for image_id in vocab.images_indexed:
        if image_id in excluded:
            continue
        score = 0.0
        for wid in words:
            plist = vocab.postings[wid]
            count = 0
            for img, c in plist:
                if img == image_id:
                    count = c
                    break
            if count == 0:
                continue
            idf = math.log(n_images / len(plist))
            score += (count / totals[image_id]) * idf
        if score > 0.0:
            scores[image_id] = score
    return scores


# ---------------------------------------------------------------------------
# Corner detection oracle
# ---------------------------------------------------------------------------

_RING = [
    (0, -3), (1, -3), (2, -2), (3, -1),
    (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1),
    (-3, 0), (-3, -1), (-2, -2), (-1, -3),
]


def segment_test_corners(img: np.ndarray, threshold: int) -> set[tuple[int, int]]:
    """Brute-force segment test over all pixels (no NMS), as (x, y) set."""
    h, w = img.shape
    corners = set()
    for y in range(3, h - 3):
        for x in range(3, w - 3):
            c = int(img[y, x])
            ring = [int(img[y + dy, x + dx]) for dx, dy in _RING]
            doubled = ring + ring
            for flags in (
                [v > c + threshold for v in doubled],
                [v < c - threshold for v in doubled],
            ):
                run = 0
                hit = False
                for f in flags:
                    run = run + 1 if f else 0
                    if run >= 9:
                        hit = True
                        break
                if hit:
                    corners.add((x, y))
                    break
    return corners


# ---------------------------------------------------------------------------
# Two-view geometry oracle
# ---------------------------------------------------------------------------

def skew(t: np.ndarray) -> np.ndarray:
    return np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])


def rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def synthetic_two_view(
    rng: np.random.Generator, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projections of one random scene from two random cameras.

    Returns ``(points_a, points_b, F)`` where the fundamental matrix F
    satisfies ``x_b^T F x_a = 0`` exactly for every correspondence.
    """
    k = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])
    r = rotation_matrix(rng.normal(size=3), rng.uniform(0.05, 0.3))
    t = rng.uniform(-1.0, 1.0, size=3)
    t[2] = rng.uniform(0.2, 0.5)

    xs = rng.uniform(-2.5, 2.5, size=n)
    ys = rng.uniform(-2.0, 2.0, size=n)
    zs = rng.uniform(4.0, 12.0, size=n)
    pts3 = np.column_stack([xs, ys, zs])

    pa_h = pts3 @ k.T
    pb_h = (pts3 @ r.T + t) @ k.T
    pa = pa_h[:, :2] / pa_h[:, 2:]
    pb = pb_h[:, :2] / pb_h[:, 2:]

    k_inv = np.linalg.inv(k)
    f = k_inv.T @ skew(t) @ r @ k_inv
    return pa, pb, f


def random_feature_set(rng: np.random.Generator, n: int, width: int = 256) -> FeatureSet:
    from loopclose.bits import random_descriptors

    return FeatureSet(
        keypoints=rng.uniform(30, 600, size=(n, 2)).astype(np.float32),
        responses=rng.uniform(1, 50, size=n).astype(np.float32),
        descriptors=random_descriptors(rng, n, width),
    )
