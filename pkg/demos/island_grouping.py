"""How retrieval candidates become islands and one loop candidate.

Starts from a raw retrieval ranking, normalises the scores, filters the
weak tail, groups the survivors into disjoint time islands, and selects
the island to verify, showing the priority rule that favours overlap with
the previous frame's island.

Run:  python demos/island_grouping.py
"""

from loopclose import (
    ScoredImage,
    build_islands,
    filter_candidates,
    normalize_scores,
    select_island,
)


def show(islands):
    for isl in islands:
        members = ", ".join(f"{i}:{s:.2f}" for i, s in isl.members)
        print(f"  frames [{isl.start:>3}, {isl.end:>3}]  score {isl.score:.3f}  "
              f"rep {isl.representative}  members {{{members}}}")


def main():
    # a retrieval ranking as the vocabulary would produce it: descending
    # raw scores for images scattered around two revisited places
    ranked = [
        ScoredImage(41, 7.9),
        ScoredImage(43, 7.1),
        ScoredImage(40, 6.4),
        ScoredImage(120, 5.2),
        ScoredImage(45, 4.9),
        ScoredImage(118, 4.1),
        ScoredImage(37, 1.3),
        ScoredImage(202, 0.8),
    ]
    print("raw retrieval ranking:")
    for s in ranked:
        print(f"  image {s.image_id:>3}  score {s.score:.2f}")

    normalized = normalize_scores(ranked)
    print("\nmin-max normalised (best -> 1, worst -> 0):")
    print("  " + ", ".join(f"{i}:{v:.2f}" for i, v in normalized))

    candidates = filter_candidates(normalized, threshold=0.3)
    print(f"\nthreshold 0.3 keeps {len(candidates)} of {len(ranked)} candidates")

    islands = build_islands(candidates, halfwidth=5, max_frame=250)
    print("\ndisjoint islands (sorted by score):")
    show(islands)

    chosen = select_island(islands, previous=None)
    print(f"\nno previous island: select the best-scored one, candidate image "
          f"{chosen.representative}")

    previous = islands[-1]
    chosen = select_island(islands, previous)
    print(f"with the previous island at [{previous.start}, {previous.end}]: "
          f"priority selection gives candidate {chosen.representative}")


if __name__ == "__main__":
    main()
