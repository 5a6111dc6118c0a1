"""Independent reference implementations shared by test modules."""

import numpy as np


def brute_force_counts(ref, est, hop, segment_seconds):
    """Per-segment enumerator: assigns every frame to its segment by start
    time, OR-reduces activity per class, and counts by explicit loops."""
    frames, classes = ref.shape
    seg_of = [int((t * hop) // segment_seconds) for t in range(frames)]
    num_segments = seg_of[-1] + 1
    n_ref = tp = fp = fn = subs = dels = ins = 0
    for k in range(num_segments):
        seg_fp = seg_fn = 0
        for n in range(classes):
            r = any(ref[t, n] for t in range(frames) if seg_of[t] == k)
            e = any(est[t, n] for t in range(frames) if seg_of[t] == k)
            n_ref += r
            tp += r and e
            fp += e and not r
            fn += r and not e
            seg_fp += e and not r
            seg_fn += r and not e
        subs += min(seg_fn, seg_fp)
        dels += max(0, seg_fn - seg_fp)
        ins += max(0, seg_fp - seg_fn)
    return n_ref, tp, fp, fn, subs, dels, ins


def random_roll_pair(rng, max_frames=40, max_classes=4):
    frames = int(rng.integers(1, max_frames + 1))
    classes = int(rng.integers(1, max_classes + 1))
    hop = float(rng.uniform(0.01, 0.35))
    ref = (rng.uniform(size=(frames, classes)) < 0.35).astype(np.uint8)
    est = (rng.uniform(size=(frames, classes)) < 0.35).astype(np.uint8)
    return ref, est, hop
