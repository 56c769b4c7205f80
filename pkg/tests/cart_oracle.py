"""Recursive pure-Python CART used to cross-check the compiled tree grower.

Follows the same split conventions (weighted Gini or variance gain, midpoint
thresholds, ``x <= t`` goes left, first best split in the per-node feature
order) and reproduces the per-node feature shuffle with its own splitmix64.
"""

M64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class SplitMix:
    def __init__(self, seed):
        self.state = seed & M64

    def next(self):
        self.state = (self.state + GOLDEN) & M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        return z ^ (z >> 31)

    def below(self, n):
        u = (self.next() >> 11) * (1.0 / 9007199254740992.0)
        return min(int(u * n), n - 1)


def seed_for_tree(base, t):
    z = (base + (t + 1) * GOLDEN) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def grow(X, y, n_classes, max_depth, min_leaf, n_try, seed):
    """Return a nested dict tree.  ``y`` holds class indices when ``n_classes > 0``."""
    rng = SplitMix(seed)
    p = len(X[0])
    classify = n_classes > 0

    def stats(rows):
        if classify:
            counts = [0.0] * n_classes
            for r in rows:
                counts[y[r]] += 1.0
            return counts
        return [sum(y[r] for r in rows) / len(rows)]

    def score(rows):
        if classify:
            c = stats(rows)
            return sum(v * v for v in c) / len(rows)
        s = sum(y[r] for r in rows)
        return s * s / len(rows)

    def total(rows):
        s = 0.0
        for r in sorted(rows, key=lambda r: X[r][0]):
            s += y[r]
        return s

    def build(rows, depth):
        node = {"value": stats(rows)}
        if not classify:
            S = total(rows)
            node["value"] = [S / len(rows)]
        if classify:
            pure = sum(1 for v in node["value"] if v > 0) <= 1
        else:
            pure = len({y[r] for r in rows}) == 1
        if pure or (max_depth is not None and depth >= max_depth) or len(rows) < 2 * min_leaf:
            return node
        parent = score(rows) if classify else S * S / len(rows)
        best = (1e-12 * (abs(parent) + 1.0), None, None)
        perm = list(range(p))
        for tried in range(p):
            j = tried + rng.below(p - tried)
            perm[tried], perm[j] = perm[j], perm[tried]
            f = perm[tried]
            ordered = sorted(rows, key=lambda r: X[r][f])
            SL = 0.0
            for k in range(len(ordered) - 1):
                SL += y[ordered[k]]
                xa, xb = X[ordered[k]][f], X[ordered[k + 1]][f]
                if xa == xb:
                    continue
                left, right = ordered[:k + 1], ordered[k + 1:]
                if len(left) < min_leaf or len(right) < min_leaf:
                    continue
                if classify:
                    gain = score(left) + score(right) - parent
                else:
                    SR = S - SL
                    gain = SL * SL / len(left) + SR * SR / len(right) - parent
                if gain > best[0]:
                    thr = xa + (xb - xa) / 2.0
                    best = (gain, f, thr if thr < xb else xa)
            if best[1] is not None and tried + 1 >= n_try:
                break
        if best[1] is None:
            return node
        _, f, thr = best
        node["feature"], node["threshold"] = f, thr
        node["left"] = build([r for r in rows if X[r][f] <= thr], depth + 1)
        node["right"] = build([r for r in rows if X[r][f] > thr], depth + 1)
        return node

    return build(list(range(len(X))), 0)


def predict(tree, x):
    while "feature" in tree:
        tree = tree["left"] if x[tree["feature"]] <= tree["threshold"] else tree["right"]
    return tree["value"]


def n_nodes(tree):
    if "feature" not in tree:
        return 1
    return 1 + n_nodes(tree["left"]) + n_nodes(tree["right"])
