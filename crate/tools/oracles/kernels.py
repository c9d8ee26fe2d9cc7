"""Independent motion-kernel rasterization (shapely) and SVD separation quality.

Each cell of a grid centered on the segment midpoint gets the length of the
segment inside it. The kernel is zero-padded to square (centered, extra zero
at the end) before the SVD.
"""
import math

import numpy as np
from shapely.geometry import LineString, box


def motion(length, angle_deg):
    t = math.radians(angle_deg)
    dx, dy = length * math.cos(t), length * math.sin(t)
    nx = max(1, math.ceil(abs(dx) - 1e-9))
    ny = max(1, math.ceil(abs(dy) - 1e-9))
    seg = LineString([(-dx / 2, -dy / 2), (dx / 2, dy / 2)])
    k = np.zeros((nx, ny))
    for i in range(nx):
        for j in range(ny):
            x0, y0 = i - nx / 2, j - ny / 2
            k[i, j] = seg.intersection(box(x0, y0, x0 + 1, y0 + 1)).length
    return k / k.sum()


def pad_square(k):
    r, c = k.shape
    n = max(r, c)
    out = np.zeros((n, n))
    out[(n - r) // 2:(n - r) // 2 + r, (n - c) // 2:(n - c) // 2 + c] = k
    return out


def quality(k):
    s = np.linalg.svd(pad_square(k), compute_uv=False)
    return s[0] ** 2 / np.sum(s ** 2)


if __name__ == "__main__":
    for angle in (30.0, 45.0):
        k = motion(4.0, angle)
        print(angle, k.shape, repr(quality(k)))
        print(np.array2string(k, precision=17))
