"""Scalar reference implementations of the continuity losses.

Plain Python floats and explicit loops, no torch: these exist to check the
batched implementations in :mod:`continuity_ssl.losses`, so they must not
share code with them.
"""

import math


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = max(math.sqrt(sum(x * x for x in a)), 1e-8)
    nb = max(math.sqrt(sum(y * y for y in b)), 1e-8)
    return dot / (na * nb)


def cross_entropy(logits, target):
    m = max(logits)
    z = sum(math.exp(v - m) for v in logits)
    return -(logits[target] - m - math.log(z))


def justification(logits_d, logits_c):
    k = len(logits_d)
    total = 0.0
    for i in range(k):
        total += cross_entropy(logits_d[i], 1) + cross_entropy(logits_c[i], 0)
    return total / k


def localization(logits, labels):
    return sum(cross_entropy(row, y) for row, y in zip(logits, labels)) / len(logits)


def approximation(e_d, e_m, e_c, omega, gamma, tau):
    """Returns (loss, mean triplet term, mean contrastive term)."""
    k = len(e_d)
    trip_sum = con_sum = 0.0
    for i in range(k):
        p_pos = cosine(e_d[i], e_m[i])
        p_neg = cosine(e_d[i], e_c[i])
        trip = max(0.0, gamma - (p_pos - p_neg))
        q_pos = math.exp(cosine(e_d[i], e_c[i]) / tau)
        denom = q_pos
        for j in range(k):
            if j != i:
                denom += math.exp(cosine(e_d[i], e_d[j]) / tau) + math.exp(cosine(e_d[i], e_c[j]) / tau)
        con = -math.log(q_pos / denom)
        trip_sum += trip
        con_sum += con
    t, c = trip_sum / k, con_sum / k
    return omega * t + (1 - omega) * c, t, c


def joint(logits_just_d, logits_just_c, logits_loc, labels, e_d, e_m, e_c,
          omega, gamma, tau, w1, w2, w3):
    l_e = approximation(e_d, e_m, e_c, omega, gamma, tau)[0]
    return (w1 * justification(logits_just_d, logits_just_c)
            + w2 * localization(logits_loc, labels) + w3 * l_e)


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at flat list ``x``."""
    grad = []
    for i in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[i] += h
        xm[i] -= h
        grad.append((f(xp) - f(xm)) / (2 * h))
    return grad
