"""L-inf pixel attacks: FGSM, PGD, AutoPGD and a C&W-style margin attack."""

from __future__ import annotations

import math

import numpy as np

from .base import (AttackBudget, AttackResult, GainOracle, Perturbation, compose,
                   deltas_of, project_linf)

EPSILON = 5.0
ALPHA = 0.1


def _check_eps(epsilon):
    if not epsilon >= 0:
        raise ValueError("epsilon must be non-negative")


def _result(clean, deltas, eps, step, it, trace, best, mtrace, n_matches):
    frame = compose(clean, deltas)
    return AttackResult(
        frame=frame,
        loss_trace=trace,
        iterations=it,
        success=n_matches == 0,
        match_trace=mtrace,
        perturbation=Perturbation(deltas_of(clean, frame), float(eps), float(step)),
        best_trace=best,
    )


def fgsm(frame, oracle, objective="cls", epsilon=EPSILON, state=None) -> AttackResult:
    """Single signed-gradient step of size epsilon from the clean frame."""
    _check_eps(epsilon)
    t = GainOracle(oracle, objective, frame.annotations, state)
    mtrace = []
    _, grads, n0 = t.evaluate(frame)
    if all(not np.any(g) for g in grads):
        zero = [np.zeros_like(im) for im in frame.images]
        return _result(frame, zero, epsilon, epsilon, 0, [], [], mtrace, n0)
    d = project_linf([epsilon * np.sign(g) for g in grads], epsilon, frame.images)
    gain, _, n = t.evaluate(compose(frame, d), need_grad=False)
    mtrace.append(n)
    return _result(frame, d, epsilon, epsilon, 1, [gain], [gain], mtrace, n)


def _init_deltas(frame, epsilon, init, rng):
    if init == "zero":
        return [np.zeros_like(im) for im in frame.images]
    if init == "gaussian":
        noise = [rng.normal(0.0, epsilon / 2.0, im.shape) for im in frame.images]
        return project_linf(noise, epsilon, frame.images)
    raise ValueError(f"unknown init {init!r}")


def pgd(frame, oracle, objective="cls", epsilon=EPSILON, alpha=ALPHA,
        budget: AttackBudget | None = None, state=None, seed=0, init="gaussian") -> AttackResult:
    """Projected sign-gradient ascent; returns the last iterate.

    With ``budget.early_stop`` the loop halts as soon as no target is matched.
    """
    _check_eps(epsilon)
    if not alpha > 0:
        raise ValueError("step size alpha must be positive")
    budget = budget or AttackBudget()
    rng = np.random.default_rng(seed)
    t = GainOracle(oracle, objective, frame.annotations, state)
    mtrace = []
    d = _init_deltas(frame, epsilon, init, rng)
    _, grads, n = t.evaluate(compose(frame, d))
    trace, best = [], []
    it = 0
    for it in range(1, budget.max_iters + 1):
        d = project_linf([x + alpha * np.sign(g) for x, g in zip(d, grads)], epsilon, frame.images)
        gain, grads, n = t.evaluate(compose(frame, d), need_grad=it < budget.max_iters)
        trace.append(gain)
        best.append(max(gain, best[-1]) if best else gain)
        mtrace.append(n)
        if budget.early_stop and n == 0:
            break
    return _result(frame, d, epsilon, alpha, it, trace, best, mtrace, n)


def autopgd_checkpoints(max_iters: int) -> list:
    """Iteration indices where AutoPGD reconsiders its step size."""
    p = [0.0, 0.22]
    while True:
        nxt = p[-1] + max(p[-1] - p[-2] - 0.03, 0.06)
        if nxt > 1.0:
            break
        p.append(nxt)
    ws = sorted({int(math.floor(round(q * max_iters, 9))) for q in p})
    return [w for w in ws if w <= max_iters]


def autopgd(frame, oracle, objective="cls", epsilon=EPSILON,
            budget: AttackBudget | None = None, state=None, seed=0, init="gaussian",
            rho=0.75, momentum=0.75) -> AttackResult:
    """Step-size-free PGD with momentum, returning the best iterate found.

    The step starts at 0.2 epsilon and is halved (restarting from the best
    point) at a checkpoint when fewer than ``rho`` of the steps since the last
    checkpoint improved the gain, or when neither step nor best gain moved.
    """
    _check_eps(epsilon)
    budget = budget or AttackBudget()
    if budget.max_iters < 2:
        raise ValueError("autopgd needs at least 2 iterations")
    rng = np.random.default_rng(seed)
    t = GainOracle(oracle, objective, frame.annotations, state)
    mtrace = []
    checks = set(autopgd_checkpoints(budget.max_iters)) - {0}

    x = _init_deltas(frame, epsilon, init, rng)
    f, g, n = t.evaluate(compose(frame, x))
    eta = 0.2 * epsilon
    x_best, f_best, n_best = x, f, n
    x_prev = x
    last_check, eta_at_check, fbest_at_check = 0, eta, f_best
    improved = 0
    trace, best = [], []
    it = 0
    for it in range(1, budget.max_iters + 1):
        z = project_linf([a + eta * np.sign(b) for a, b in zip(x, g)], epsilon, frame.images)
        if it == 1:
            x_new = z
        else:
            x_new = project_linf(
                [a + momentum * (c - a) + (1.0 - momentum) * (a - p) for a, c, p in zip(x, z, x_prev)],
                epsilon, frame.images)
        f_new, g_new, n_new = t.evaluate(compose(frame, x_new))
        if f_new > f:
            improved += 1
        x_prev, x, f, g = x, x_new, f_new, g_new
        if f > f_best:
            x_best, f_best, n_best = x, f, n_new
        trace.append(f)
        best.append(f_best)
        mtrace.append(n_new)
        if budget.early_stop and n_new == 0:
            break
        if it in checks:
            few = improved < rho * (it - last_check)
            stale = eta == eta_at_check and f_best == fbest_at_check
            eta_at_check, fbest_at_check = eta, f_best
            if few or stale:
                eta /= 2.0
                x_prev = x = x_best
                f, g, _ = t.evaluate(compose(frame, x))
            last_check, improved = it, 0
    out = _result(frame, x_best, epsilon, 0.2 * epsilon, it, trace, best, mtrace, n_best)
    out.extra["checkpoints"] = sorted(checks | {0})
    return out


def cw_attack(frame, oracle, epsilon=EPSILON, budget: AttackBudget | None = None,
              kappa=0.0, lr=0.5, beta1=0.9, beta2=0.999, state=None, objective=None) -> AttackResult:
    """Minimise the clamped logit margin with Adam inside the L-inf ball.

    Starts from the clean frame and returns the iterate with the lowest
    margin loss; the trace holds the ascended gain (negated loss).
    """
    from ..objectives import Objective

    _check_eps(epsilon)
    budget = budget or AttackBudget()
    objective = objective or Objective("cw", kappa=kappa)
    t = GainOracle(oracle, objective, frame.annotations, state)
    mtrace = []
    x = [np.zeros_like(im) for im in frame.images]
    f, g, n = t.evaluate(frame)
    m = [np.zeros_like(a) for a in x]
    v = [np.zeros_like(a) for a in x]
    x_best, f_best, n_best = x, f, n
    trace, best = [], []
    it = 0
    for it in range(1, budget.max_iters + 1):
        steps = []
        for k, gk in enumerate(g):
            m[k] = beta1 * m[k] + (1 - beta1) * gk
            v[k] = beta2 * v[k] + (1 - beta2) * gk * gk
            mh = m[k] / (1 - beta1 ** it)
            vh = v[k] / (1 - beta2 ** it)
            steps.append(x[k] + lr * mh / (np.sqrt(vh) + 1e-8))
        x = project_linf(steps, epsilon, frame.images)
        f, g, n = t.evaluate(compose(frame, x), need_grad=it < budget.max_iters)
        if f > f_best:
            x_best, f_best, n_best = x, f, n
        trace.append(f)
        best.append(f_best)
        mtrace.append(n)
        if budget.early_stop and n == 0:
            break
    return _result(frame, x_best, epsilon, lr, it, trace, best, mtrace, n_best)
