"""Finite-difference check of a detector oracle's input gradients."""

from __future__ import annotations

import numpy as np

FD_STEP = 0.5
KINK_TOL = 1e-3


def gradient_support(grads) -> list:
    """``(camera, row, col)`` for every pixel with a nonzero gradient entry."""
    out = []
    for c, g in enumerate(grads):
        rr, cc = np.nonzero(np.any(g != 0, axis=2))
        out.extend((c, int(r), int(k)) for r, k in zip(rr, cc))
    return out


def _loss_at(oracle, frame, state, spec, c, r, k, ch, value):
    images = [np.array(im) for im in frame.images]
    images[c][r, k, ch] = value
    return oracle.loss(frame.with_images(images), state, spec)


def finite_difference_check(oracle, frame, state, spec, n_probes: int = 100, h: float = FD_STEP,
                            rng=None, kink_tol: float = KINK_TOL) -> dict:
    """Compare analytic gradients with central differences at random pixel channels.

    Probes are drawn from the gradient's support. A probe whose stencil
    straddles a kink of a piecewise loss (forward and backward differences
    disagree by more than ``kink_tol`` times the largest gradient entry)
    says nothing about the
    gradient; it is counted in ``skipped`` and replaced by another probe.
    The error is ``max |analytic - numeric| / max |numeric|`` over the kept
    probes.
    """
    rng = np.random.default_rng(rng)
    grads = oracle.input_gradient(frame, state, spec)
    support = gradient_support(grads)
    order = rng.permutation(len(support))
    analytic, numeric, skipped = [], [], 0
    f0 = oracle.loss(frame, state, spec)
    gmax = max(float(np.abs(g).max(initial=0.0)) for g in grads)
    for p in order:
        if len(analytic) == n_probes:
            break
        c, r, k = support[p]
        ch = int(rng.integers(3))
        base = float(frame.images[c][r, k, ch])
        # the stencil has to stay inside [0, 255]; shift the centre if needed
        centre = min(max(base, h), 255.0 - h)
        if centre != base:
            images = [np.array(im) for im in frame.images]
            images[c][r, k, ch] = centre
            shifted = frame.with_images(images)
            fc = oracle.loss(shifted, state, spec)
            ga = oracle.input_gradient(shifted, state, spec)[c][r, k, ch]
        else:
            fc, ga = f0, grads[c][r, k, ch]
        fp = _loss_at(oracle, frame, state, spec, c, r, k, ch, centre + h)
        fm = _loss_at(oracle, frame, state, spec, c, r, k, ch, centre - h)
        fwd, bwd = (fp - fc) / h, (fc - fm) / h
        if abs(fwd - bwd) > kink_tol * gmax:
            skipped += 1
            continue
        analytic.append(float(ga))
        numeric.append((fp - fm) / (2.0 * h))
    a, n = np.array(analytic), np.array(numeric)
    scale = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0))
    err = float(np.abs(a - n).max() / scale) if scale > 0 else 0.0
    return {"probes": len(a), "skipped": skipped, "rel_error": err, "analytic": analytic,
            "numeric": numeric}
