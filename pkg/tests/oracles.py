"""Brute-force reference implementations used as independent test oracles."""
from collections import deque
import itertools

import numpy as np


def erode_bruteforce(bits, offsets):
    nx, ny, nz = bits.shape
    out = np.zeros_like(bits)
    for x, y, z in itertools.product(range(nx), range(ny), range(nz)):
        ok = True
        for dx, dy in offsets:
            i, j = x + dx, y + dy
            if not (0 <= i < nx and 0 <= j < ny and bits[i, j, z]):
                ok = False
                break
        out[x, y, z] = ok
    return out


def dilate_bruteforce(bits, offsets):
    nx, ny, nz = bits.shape
    out = np.zeros_like(bits)
    for x, y, z in zip(*np.nonzero(bits)):
        for dx, dy in offsets:
            i, j = x + dx, y + dy
            if 0 <= i < nx and 0 <= j < ny:
                out[i, j, z] = True
    return out


def neighbours(connectivity):
    steps = [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]
    if connectivity == "six":
        steps = [d for d in steps if sum(map(abs, d)) == 1]
    return steps


def flood_labels(bits, connectivity="twenty_six"):
    """Label connected sets by breadth-first search; labels in scan order."""
    labels = np.zeros(bits.shape, dtype=int)
    steps = neighbours(connectivity)
    n = 0
    for start in zip(*np.nonzero(bits)):
        if labels[start]:
            continue
        n += 1
        labels[start] = n
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for d in steps:
                q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
                if all(0 <= q[a] < bits.shape[a] for a in range(3)) and bits[q] and not labels[q]:
                    labels[q] = n
                    queue.append(q)
    return labels, n


def same_partition(a, b):
    """True when two label grids describe the same partition (labels may be permuted)."""
    if not np.array_equal(a > 0, b > 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    return len(pairs) == len({p[0] for p in pairs}) == len({p[1] for p in pairs})


def fill_bruteforce(bits):
    """Background reachable from the border (6-connected) stays background."""
    reach = np.zeros(bits.shape, dtype=bool)
    queue = deque()
    nx, ny, nz = bits.shape
    for p in itertools.product(range(nx), range(ny), range(nz)):
        if (not bits[p]) and (0 in p or p[0] == nx - 1 or p[1] == ny - 1 or p[2] == nz - 1):
            reach[p] = True
            queue.append(p)
    steps = neighbours("six")
    while queue:
        p = queue.popleft()
        for d in steps:
            q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
            if all(0 <= q[a] < bits.shape[a] for a in range(3)) and not bits[q] and not reach[q]:
                reach[q] = True
                queue.append(q)
    return ~reach
