"""Independent reference implementations used to cross-check the library.

Everything here is written with plain Python loops and the math module,
deliberately avoiding the library's own code paths (and numpy where
practical), so agreement is meaningful.
"""

from __future__ import annotations

import math


# ---------------------------------------------------------- adjusted query


def oracle_adjusted_query(query, positives, negatives):
    """Step-by-step transcription of the four query-construction steps."""

    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(x * x for x in b))
        return dot / (na * nb)

    def softmax(scores):
        exps = [math.exp(s) for s in scores]
        total = sum(exps)
        return [e / total for e in exps]

    def weighted_sum(weights, vectors, dim):
        out = [0.0] * dim
        for w, vec in zip(weights, vectors):
            for i in range(dim):
                out[i] += w * vec[i]
        return out

    dim = len(query)
    s_pos = [cos(query, e) for e in positives]
    alpha_pos = softmax(s_pos)
    a_pos = weighted_sum(alpha_pos, positives, dim)
    if negatives:
        s_neg = [cos(query, e) for e in negatives]
        alpha_neg = softmax(s_neg)
        a_neg = weighted_sum(alpha_neg, negatives, dim)
    else:
        a_neg = [0.0] * dim
    return [p - n for p, n in zip(a_pos, a_neg)]


# ------------------------------------------------------- selection pipeline


def _norm(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def _dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def oracle_selection(queries, masks, dominance=0.8, sigma_mult=3.0, normalize=True):
    """Straight-line transcription of the selection-and-verification steps.

    Returns (candidates, verified) where candidates is a list of
    (bin index, mask index, dominance). Conventions shared with the library
    (they are part of its documented contract): ties in the distance sort
    break by (mask, query) ascending, argmax ties go to the lowest mask,
    a mask dominant in several bins keeps the lowest bin, and a degenerate
    reference (fewer than two queries, or zero deviation) accepts all
    candidates.
    """
    m, n = len(queries), len(masks)
    Q = [_norm(q) for q in queries] if normalize else [list(map(float, q)) for q in queries]
    M = [_norm(v) for v in masks] if normalize else [list(map(float, v)) for v in masks]

    D = {}
    for i in range(m):
        for j in range(n):
            D[(i, j)] = _dist(Q[i], M[j])

    order = sorted(D.items(), key=lambda kv: (kv[1], kv[0][1], kv[0][0]))
    bins = [order[k * m : (k + 1) * m] for k in range(n)]

    candidates = []
    claimed = set()
    for k, entries in enumerate(bins):
        counts = {}
        for (_, j), _d in entries:
            counts[j] = counts.get(j, 0) + 1
        best = min(counts, key=lambda j: (-counts[j], j))
        share = counts[best] / len(entries)
        if share > dominance and best not in claimed:
            claimed.add(best)
            candidates.append((k, best, share))

    pairs = [_dist(Q[i], Q[j]) for i in range(m) for j in range(i + 1, m)]
    if pairs:
        mu_r = sum(pairs) / len(pairs)
        sigma_r = math.sqrt(sum((r - mu_r) ** 2 for r in pairs) / len(pairs))
    else:
        mu_r = sigma_r = float("nan")
    degenerate = m < 2 or sigma_r == 0.0

    verified = []
    for _k, j, _share in candidates:
        mu_dj = sum(D[(i, j)] for i in range(m)) / m
        if degenerate or abs(mu_dj - mu_r) <= sigma_mult * sigma_r:
            verified.append(j)
    return candidates, verified


# ------------------------------------------------------------- AP matching


def _iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def oracle_class_ap(detections, gt_boxes, threshold):
    """Average precision for one class, from first principles.

    ``detections``: list of (image_id, score, xyxy box). ``gt_boxes``: dict
    image_id -> list of xyxy boxes. Shares the library's documented match
    contract: process detections by descending score (ties by image id then
    box), match the unmatched ground truth with the highest IoU at or above
    the threshold (ties to the earliest), AP is the exact area under the
    precision envelope.
    """
    n_gt = sum(len(v) for v in gt_boxes.values())
    if n_gt == 0:
        return 0.0
    dets = sorted(detections, key=lambda d: (-d[1], d[0], tuple(d[2])))
    used = {img: [False] * len(boxes) for img, boxes in gt_boxes.items()}

    flags = []
    for img, _score, box in dets:
        best_j = -1
        best_iou = threshold
        for j, gt in enumerate(gt_boxes.get(img, [])):
            if used.get(img, [])[j]:
                continue
            iou = _iou(box, gt)
            if iou >= best_iou and (best_j < 0 or iou > best_iou):
                best_iou = iou
                best_j = j
        if best_j >= 0:
            used[img][best_j] = True
            flags.append(True)
        else:
            flags.append(False)

    tp = 0
    points = []
    for k, flag in enumerate(flags):
        if flag:
            tp += 1
        points.append((tp / n_gt, tp / (k + 1)))

    ap = 0.0
    prev_recall = 0.0
    for idx, (recall, _prec) in enumerate(points):
        if recall > prev_recall:
            envelope = max(p for r, p in points[idx:])
            ap += (recall - prev_recall) * envelope
            prev_recall = recall
    return ap
