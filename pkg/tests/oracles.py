"""Brute-force reference implementations used as test oracles."""

import numpy as np


def rates_at(scores, labels, t):
    scores, labels = np.asarray(scores), np.asarray(labels)
    g, s = scores[labels == 1], scores[labels == 0]
    frr = sum(1 for x in g if x < t) / len(g)
    far = sum(1 for x in s if x >= t) / len(s)
    return frr, far


def eer_bruteforce(scores, labels):
    """Enumerate every distinct score (and +inf) as a threshold.

    The crossing is located as the intersection of the two straight segments
    joining the last operating point with FAR > FRR and the first with
    FAR <= FRR.
    """
    pts = [(t, *rates_at(scores, labels, t)) for t in sorted(set(float(x) for x in scores))]
    pts.append((np.inf, 1.0, 0.0))
    for j, (t, frr, far) in enumerate(pts):
        if far <= frr:
            break
    if far == frr or j == 0:
        return far
    _, frr0, far0 = pts[j - 1]
    # FAR(l) = far0 + l (far - far0), FRR(l) = frr0 + l (frr - frr0)
    lam = (far0 - frr0) / ((far0 - frr0) - (far - frr))
    return frr0 + lam * (frr - frr0)


def min_tdcf_bruteforce(scores, labels, c1, c2):
    candidates = [-np.inf, *sorted(set(float(x) for x in scores)), np.inf]
    best = np.inf
    for t in candidates:
        pmiss, pfa = rates_at(scores, labels, t)
        best = min(best, (c1 * pmiss + c2 * pfa) / min(c1, c2))
    return best


def random_score_set(rng, max_n=200):
    n = int(rng.integers(2, max_n + 1))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    kind = rng.integers(0, 3)
    if kind == 0:
        scores = rng.normal(size=n) + labels * rng.uniform(0, 3)
    elif kind == 1:
        scores = rng.integers(0, 6, n).astype(float)  # heavy ties
    else:
        scores = np.round(rng.uniform(-1, 1, n), 2)
    return scores, labels
