"""Brute-force reference implementations shared by the unit and acceptance tests."""
import itertools
import math

from siamdiff.residues import MASK


def enumerate_sequence_posterior(small, types=3, prior=(0.5, 0.3, 0.2)):
    """q(x_{t-1} | x_t, x_0) by summing over every path x_0 -> x_1 -> ... -> x_T."""
    states = list(range(types)) + [MASK]
    T = small.T

    def step(a, b, t):
        rho = small.step_mask_at(t)
        if a == MASK:
            return 1.0 if b == MASK else 0.0
        if b == MASK:
            return rho
        return 1.0 - rho if b == a else 0.0

    joint = {}
    for x0 in range(types):
        for path in itertools.product(states, repeat=T):
            pr = prior[x0]
            prev = x0
            for t, x in enumerate(path, start=1):
                pr *= step(prev, x, t)
                prev = x
            if pr > 0:
                joint[(x0,) + path] = pr
    out = {}
    for t in range(1, T + 1):
        for x0 in range(types):
            for xt in states:
                den = sum(v for k, v in joint.items() if k[0] == x0 and k[t] == xt)
                if den == 0:
                    continue
                dist = {}
                for k, v in joint.items():
                    if k[0] == x0 and k[t] == xt:
                        dist[k[t - 1]] = dist.get(k[t - 1], 0.0) + v / den
                out[(t, x0, xt)] = dist
    return out


def _pattern_f(pattern, truth):
    """Protein-centric F of one 0/1 prediction pattern, or None when skipped."""
    precs, recs = [], []
    for row, t in zip(pattern, truth):
        hit = sum(1 for a, b in zip(row, t) if a and b)
        if sum(row):
            precs.append(hit / sum(row))
        recs.append(hit / sum(t))
    if not precs:
        return None
    p, r = sum(precs) / len(precs), sum(recs) / len(recs)
    return None if p + r == 0 else 2 * p * r / (p + r)


def exhaustive_fmax(scores, truth, grid):
    N, F = len(scores), len(scores[0])
    table = {}
    for bits in itertools.product([0, 1], repeat=N * F):
        pattern = tuple(tuple(bits[i * F:(i + 1) * F]) for i in range(N))
        table[pattern] = _pattern_f(pattern, truth)
    best = 0.0
    for tau in grid:
        pattern = tuple(tuple(int(s >= tau) for s in row) for row in scores)
        f = table[pattern]
        if f is not None:
            best = max(best, f)
    return best


def rank_pearson(x, y):
    """Independent oracle: rank by hand (ties averaged), then Pearson."""
    def ranks(v):
        out = []
        for a in v:
            below = sum(1 for b in v if b < a)
            equal = sum(1 for b in v if b == a)
            out.append(below + (equal + 1) / 2)
        return out
    rx, ry = ranks(x), ranks(y)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den
