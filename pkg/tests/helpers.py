"""Independent oracles shared by the test modules."""

import itertools

import numpy as np

from ssl_asymptotics.core import ParamVector


def brute_chain_loglik(model, tokens, labels):
    """log p(observed labels, x) by summing the joint over every completion."""
    tokens = np.asarray(tokens)
    labels = np.asarray(labels)
    m = len(tokens)
    k = model.num_states
    total = 0.0
    for ys in itertools.product(range(k), repeat=m):
        if any(l >= 0 and l != y for l, y in zip(labels, ys)):
            continue
        p = model.initial[ys[0]] * model.emission[ys[0], tokens[0]]
        for t in range(1, m):
            p *= model.transition[ys[t - 1], ys[t]] * model.emission[ys[t], tokens[t]]
        total += p
    return float(np.log(total))


def brute_nb_loglik(model, counts, label):
    """log p(x, y) or log p(x) without the multinomial coefficient, by direct products."""
    counts = np.asarray(counts)

    def joint(y):
        return model.prior[y] * np.prod(model.conditional[y] ** counts)

    if label >= 0:
        return float(np.log(joint(label)))
    return float(np.log(sum(joint(y) for y in range(model.num_classes))))


def central_gradient(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def loglik_in_params(model, fn):
    """Wrap fn(model_at_theta) as a function of the raw parameter vector."""
    layout = model.layout

    def f(x):
        return fn(model.with_params(ParamVector(x, layout)))

    return f


def rel_frobenius(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def dominated_pairwise(points):
    """Indices dominated by some other point, by the O(k^2) definition."""
    out = set()
    for i, (ci, ei) in enumerate(points):
        for j, (cj, ej) in enumerate(points):
            if j != i and cj <= ci and ej <= ei and (cj < ci or ej < ei):
                out.add(i)
                break
    return out


def exhaustive_choice(objective, candidates, traces):
    """Index chosen by scoring every (n, lam) candidate directly, or None."""
    best = None
    for i, c in enumerate(candidates):
        cost = c.lam * c.n
        err = traces[c.lam] / c.n
        if objective.kind == "budget":
            ok, val = cost <= objective.bound, err
        elif objective.kind == "accuracy":
            ok, val = err <= objective.bound, cost
        else:
            ok, val = True, cost + objective.alpha * err
        if ok and (best is None or (val, cost, err, i) < best):
            best = (val, cost, err, i)
    return None if best is None else best[3]
