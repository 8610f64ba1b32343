"""Brute-force reference implementations used to check the metrics module.

Everything here works from raw label vectors or raw points, never from a
contingency table, so it shares no code path with the module under test.
"""

import itertools
import math
from collections import Counter

import numpy as np


def set_partitions(n, max_blocks):
    """Every partition of n points into at most ``max_blocks`` blocks, once each.

    Partitions are emitted as restricted growth strings: label 0 first, and
    each new label is one more than the largest seen so far.
    """
    out = []

    def grow(prefix, top):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for lab in range(min(top + 2, max_blocks)):
            grow(prefix + [lab], max(top, lab))

    if n > 0:
        grow([0], 0)
    return np.array(out, dtype=np.int64).reshape(len(out), n)


def acc_bruteforce(truth, pred):
    """Max over every injective relabelling of clusters onto padded labels."""
    t_ids = sorted(set(truth))
    p_ids = sorted(set(pred))
    slots = t_ids + [object()] * max(0, len(p_ids) - len(t_ids))
    best = 0
    for perm in itertools.permutations(slots, len(p_ids)):
        mapping = dict(zip(p_ids, perm))
        best = max(best, sum(mapping[p] == t for t, p in zip(truth, pred)))
    return best / len(truth)


def pair_counts(truth, pred):
    """(both same, same truth only, same pred only, both different) over i < j."""
    a = b = c = d = 0
    n = len(truth)
    for i in range(n):
        for j in range(i + 1, n):
            st, sp = truth[i] == truth[j], pred[i] == pred[j]
            if st and sp:
                a += 1
            elif st:
                b += 1
            elif sp:
                c += 1
            else:
                d += 1
    return a, b, c, d


def ari_bruteforce(truth, pred):
    a, b, c, d = pair_counts(truth, pred)
    num = 2 * (a * d - b * c)
    den = (a + b) * (b + d) + (a + c) * (c + d)
    return 1.0 if den == 0 else num / den


def nmi_bruteforce(truth, pred):
    n = len(truth)
    ct, cp, joint = Counter(truth), Counter(pred), Counter(zip(truth, pred))
    h = lambda cnt: -sum(v / n * math.log(v / n) for v in cnt.values())
    ht, hp = h(ct), h(cp)
    if ht + hp == 0:
        return 0.0
    mi = sum(v / n * math.log((v / n) / (ct[x] / n * cp[y] / n)) for (x, y), v in joint.items())
    return 2 * mi / (ht + hp)


def silhouette_bruteforce(points, pred):
    points = np.asarray(points, dtype=float).reshape(len(pred), -1)
    n = len(pred)
    labels = sorted(set(pred))
    dist = lambda i, j: math.sqrt(sum((points[i] - points[j]) ** 2))
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if pred[j] == pred[i] and j != i]
        if not own:
            continue
        a = sum(dist(i, j) for j in own) / len(own)
        b = min(
            sum(dist(i, j) for j in range(n) if pred[j] == lab) / sum(1 for j in range(n) if pred[j] == lab)
            for lab in labels if lab != pred[i]
        )
        if max(a, b) > 0:
            total += (b - a) / max(a, b)
    return total / n


def _groups(points, pred):
    points = np.asarray(points, dtype=float).reshape(len(pred), -1)
    return points, {lab: points[[i for i in range(len(pred)) if pred[i] == lab]] for lab in sorted(set(pred))}


def chs_bruteforce(points, pred):
    points, groups = _groups(points, pred)
    n, k = len(points), len(groups)
    mean = points.mean(axis=0)
    tr_b = sum(len(g) * float(np.sum((g.mean(axis=0) - mean) ** 2)) for g in groups.values())
    tr_w = sum(float(np.sum((g - g.mean(axis=0)) ** 2)) for g in groups.values())
    return math.inf if tr_w == 0 else tr_b / tr_w * (n - k) / (k - 1)


def dbi_bruteforce(points, pred):
    _, groups = _groups(points, pred)
    cents = {lab: g.mean(axis=0) for lab, g in groups.items()}
    spread = {lab: float(np.mean(np.linalg.norm(g - cents[lab], axis=1))) for lab, g in groups.items()}
    total = 0.0
    for i in groups:
        worst = 0.0
        for j in groups:
            if i == j:
                continue
            d = float(np.linalg.norm(cents[i] - cents[j]))
            worst = max(worst, math.inf if d == 0 else (spread[i] + spread[j]) / d)
        total += worst
    return total / len(groups)


def best_partition_1d(xs, k):
    """Minimum inertia over every assignment of 1-D points to k non-empty groups."""
    best = None
    for labels in itertools.product(range(k), repeat=len(xs)):
        if len(set(labels)) < k:
            continue
        groups = [[x for x, g in zip(xs, labels) if g == j] for j in range(k)]
        inertia = sum(sum((x - sum(g) / len(g)) ** 2 for x in g) for g in groups)
        if best is None or inertia < best[0]:
            best = (inertia, sorted(sum(g) / len(g) for g in groups))
    return best


# vectorised versions: one truth vector against a stack of predictions

def acc_batch(truth, preds, k):
    truth = np.asarray(truth)
    best = np.zeros(len(preds), dtype=np.int64)
    for perm in itertools.permutations(range(k)):
        best = np.maximum(best, (np.asarray(perm)[preds] == truth).sum(axis=1))
    return best


def ari_batch(truth, preds):
    """Pair-count ARI as (numerator, denominator) integer arrays."""
    n = len(truth)
    iu = np.triu_indices(n, 1)
    st = (truth[:, None] == truth[None, :])[iu]
    sp = (preds[:, :, None] == preds[:, None, :])[:, iu[0], iu[1]]
    a = (sp & st).sum(axis=1)
    b = (~sp & st).sum(axis=1)
    c = (sp & ~st).sum(axis=1)
    d = (~sp & ~st).sum(axis=1)
    return 2 * (a * d - b * c), (a + b) * (b + d) + (a + c) * (c + d)


def nmi_batch(truth, preds, k):
    n = len(truth)
    t1 = np.eye(k)[truth]                       # (n, k)
    p1 = np.eye(k)[preds]                       # (m, n, k)
    joint = np.einsum("na,mnb->mab", t1, p1) / n
    pt, pp = t1.sum(axis=0) / n, p1.sum(axis=1) / n

    def ent(p):
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.where(p > 0, p * np.log(p), 0.0).sum(axis=-1)

    outer = pt[None, :, None] * pp[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        mi = np.where(joint > 0, joint * np.log(joint / outer), 0.0).sum(axis=(1, 2))
    h = ent(pt) + ent(pp)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(h == 0, 0.0, 2 * mi / h)
