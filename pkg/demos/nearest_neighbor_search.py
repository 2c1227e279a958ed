"""Budgeted search in the Hamming clustering forest vs. exhaustive scan.

Indexes clustered binary descriptors (the regime real image features live
in), then sweeps the search budget to show the accuracy/latency trade:
a small budget already finds the exact nearest neighbour almost always,
while a budget the size of the corpus makes the search provably exact.

Run:  python demos/nearest_neighbor_search.py
"""

import time

import numpy as np

from loopclose import HammingForest
from loopclose.bits import flip_random_bits, hamming_matrix, random_descriptors


def clustered_corpus(rng, n_points, observations_per_point):
    centres = random_descriptors(rng, n_points)
    descs = np.concatenate(
        [flip_random_bits(rng, np.tile(c, (observations_per_point, 1)), 10) for c in centres]
    )
    return descs[rng.permutation(len(descs))]


def main():
    rng = np.random.default_rng(0)
    corpus = clustered_corpus(rng, n_points=300, observations_per_point=15)
    n = len(corpus)
    print(f"indexing {n} descriptors (300 scene points x 15 noisy observations)")

    forest = HammingForest(branching=16, leaf_capacity=150, num_trees=4, seed=0)
    t0 = time.perf_counter()
    forest.build({i: corpus[i] for i in range(n)})
    print(f"forest built in {time.perf_counter() - t0:.2f}s (4 trees)")

    queries = flip_random_bits(rng, corpus[rng.integers(n, size=500)], 15)
    oracle = hamming_matrix(queries, corpus).min(axis=1)

    print(f"{'budget':>7} {'exact-NN rate':>14} {'us/query':>9}")
    for budget in (16, 32, 64, 128, 512, n):
        t0 = time.perf_counter()
        hits = sum(
            forest.knn_search(queries[i], 1, budget=budget)[0].distance == oracle[i]
            for i in range(len(queries))
        )
        per_query = (time.perf_counter() - t0) / len(queries) * 1e6
        label = f"{budget} (=corpus)" if budget == n else str(budget)
        print(f"{label:>12} {hits / len(queries):>13.3f} {per_query:>9.0f}")

    print("\nwith budget >= corpus size the budgeted search degrades to exact:")
    assert all(
        forest.knn_search(queries[i], 1, budget=n)[0].distance == oracle[i]
        for i in range(len(queries))
    )
    print("all 500 queries returned the linear-scan nearest-neighbour distance")


if __name__ == "__main__":
    main()
