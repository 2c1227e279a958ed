"""Life of an online visual dictionary.

Streams a synthetic camera trajectory through the vocabulary and prints
the per-frame maintenance counters: how many descriptors merged into
existing words, how many entered as temporaries, and how many temporaries
the probation policy deleted again.  Ends by querying with a revisited
frame to show tf-idf retrieval landing on the right part of the sequence.

Run:  python demos/incremental_vocabulary.py
"""

from loopclose import VocabParams, Vocabulary, generate_synthetic


def main():
    frames, gt = generate_synthetic("new:80,revisit:20:1", n_features=300, noise_bits=20, seed=1)
    params = VocabParams()  # branching 16, leaf capacity 150, 4 trees, probation 2/2
    vocab = Vocabulary(frames[0], params)
    print(f"seeded the dictionary with frame 0: {len(vocab)} stable words\n")

    print(f"{'frame':>5} {'vocab':>7} {'temp':>6} {'merged':>7} {'added':>6} {'deleted':>8}")
    for t in range(1, 80):
        vocab.process_image(frames[t], image_id=t, frame=t)
        if t <= 5 or t % 10 == 0:
            s = vocab.last_stats
            print(f"{s.frame:>5} {s.vocab_size:>7} {s.temp_count:>6} {s.merged:>7} "
                  f"{s.added:>6} {s.deleted:>8}")

    print("\nwords that fail to reappear within the probation window are deleted,")
    print("so the dictionary grows with the environment, not with the frame count.")

    revisit_frame = frames[80]  # a noisy re-observation of frame 20
    ranked = vocab.score_images(revisit_frame, exclude=range(60, 80))
    print(f"\nquerying with a noisy revisit of frame {gt[80][0]} "
          f"(recent frames excluded):")
    for s in ranked[:5]:
        print(f"  image {s.image_id:>3}  tf-idf score {s.score:.4f}")
    print(f"top candidate {ranked[0].image_id} is within the revisited neighbourhood")


if __name__ == "__main__":
    main()
