"""Slow, loop-based reference implementations used as test oracles."""

import math


def _dist(a, b):
    return math.sqrt((a.center[0] - b.center[0]) ** 2 + (a.center[1] - b.center[1]) ** 2)


def naive_match(dets, gts, label, thr):
    ds = [i for i in range(len(dets)) if dets[i].label == label]
    # insertion sort by descending score keeps equal scores in input order
    ranked = []
    for i in ds:
        k = len(ranked)
        while k > 0 and dets[ranked[k - 1]].score < dets[i].score:
            k -= 1
        ranked.insert(k, i)
    used, flags, pairs = [], [], []
    for i in ranked:
        best, bd = None, float("inf")
        for j in range(len(gts)):
            if gts[j].label != label or gts[j].sample_id != dets[i].sample_id or j in used:
                continue
            d = _dist(dets[i], gts[j])
            if d < bd:
                best, bd = j, d
        if best is not None and bd < thr:
            used.append(best)
            flags.append(True)
            pairs.append((i, best))
        else:
            flags.append(False)
    return flags, pairs, sum(1 for g in gts if g.label == label)


def _interp(x, xs, ys):
    """Linear interpolation with numpy's conventions: left = ys[0], right = 0,
    and on repeated nodes the last node at or below x wins."""
    if x < xs[0]:
        return ys[0]
    if x > xs[-1]:
        return 0.0
    k = max(i for i in range(len(xs)) if xs[i] <= x)
    if k == len(xs) - 1:
        return ys[k]
    t = (x - xs[k]) / (xs[k + 1] - xs[k])
    return ys[k] + t * (ys[k + 1] - ys[k])


def naive_ap(dets, gts, label, thr):
    flags, _, n_gt = naive_match(dets, gts, label, thr)
    if n_gt == 0 or not flags:
        return 0.0
    tp = fp = 0
    prec, rec = [], []
    for f in flags:
        tp += f
        fp += not f
        prec.append(tp / (tp + fp))
        rec.append(tp / n_gt)
    total = 0.0
    count = 0
    for k in range(11, 101):
        p = _interp(k / 100.0, rec, prec)
        total += max(p - 0.1, 0.0)
        count += 1
    return total / count / 0.9


def _wrap(a):
    a = (a + math.pi) % (2 * math.pi) - math.pi
    return a


def naive_tp(dets, gts, classes):
    rows = []
    attrs = any(g.attribute is not None for g in gts)
    for label in classes:
        if not any(g.label == label for g in gts):
            continue
        _, pairs, _ = naive_match(dets, gts, label, 2.0)
        if not pairs:
            rows.append([1.0] * 5)
            continue
        errs = []
        for i, j in pairs:
            d, g = dets[i], gts[j]
            r = 1.0
            for a, b in zip(d.size, g.size):
                r *= min(a, b) / max(a, b)
            ve = math.sqrt((d.velocity[0] - g.velocity[0]) ** 2 + (d.velocity[1] - g.velocity[1]) ** 2)
            aa = None if g.attribute is None else (0.0 if d.attribute == g.attribute else 1.0)
            errs.append([_dist(d, g), 1 - r, abs(_wrap(d.yaw - g.yaw)), ve, aa])
        row = [sum(e[k] for e in errs) / len(errs) for k in range(4)]
        aae = [e[4] for e in errs if e[4] is not None]
        row.append(sum(aae) / len(aae) if aae else 1.0)
        rows.append(row)
    if not rows:
        rows = [[1.0] * 5]
    m = [sum(r[k] for r in rows) / len(rows) for k in range(5)]
    if not attrs:
        m[4] = None
    return m


def naive_nds(mAP, errs):
    used = [e for e in errs if e is not None]
    return (5 * mAP + sum(1 - min(1.0, e) for e in used)) / (5 + len(used))


def naive_object_match(dets, gts, thr):
    """Class-agnostic greedy match on max sigmoid score, as a list of pairs."""
    def sig(z):
        return 1 / (1 + math.exp(-z)) if z >= 0 else math.exp(z) / (1 + math.exp(z))

    best = [max(sig(z) for z in d.class_scores) for d in dets]
    order = sorted(range(len(dets)), key=lambda i: -best[i])
    used, pairs = set(), []
    for i in order:
        cand = [(_dist2(dets[i].location, g.center), j) for j, g in enumerate(gts) if j not in used]
        cand = [c for c in cand if c[0] <= thr]
        if cand:
            d, j = min(cand)
            used.add(j)
            pairs.append((i, j))
    return pairs


def _dist2(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def random_instance(rng, n_classes=2, max_dets=10, max_gts=6, attributes=False):
    from advbench3d.metrics import EvalBox

    labels = ["Car", "Pedestrian", "Barrier"][:n_classes]

    def box(score):
        return EvalBox(
            sample_id=int(rng.integers(2)),
            label=labels[int(rng.integers(n_classes))],
            center=(float(rng.uniform(0, 6)), float(rng.uniform(0, 6)), 0.0),
            size=tuple(float(v) for v in rng.uniform(0.5, 3, 3)),
            yaw=float(rng.uniform(-math.pi, math.pi)),
            velocity=tuple(float(v) for v in rng.normal(0, 2, 2)),
            score=score,
            attribute=(str(rng.choice(["moving", "parked"])) if attributes else None),
        )

    # coarse scores so ties happen
    dets = [box(float(rng.integers(1, 6)) / 5) for _ in range(int(rng.integers(0, max_dets + 1)))]
    gts = [box(1.0) for _ in range(int(rng.integers(0, max_gts + 1)))]
    return dets, gts, labels
