"""Pure NumPy versions of the compiled kernels in ``_kernels.pyx``.

Same arguments, same accumulation order, same results (bit for bit).
"""
import numpy as np


def bilateral_filter(padded, spatial, offsets, lut, step, radius):
    padded = np.ascontiguousarray(padded, dtype=np.float64)
    h = padded.shape[0] - 2 * radius
    w = padded.shape[1] - 2 * radius
    tmax = lut.shape[0] - 2.0
    inv_step = 1.0 / step
    center = padded[radius:radius + h, radius:radius + w]
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for a, da in enumerate(offsets):
        for b, db in enumerate(offsets):
            v = padded[radius + da:radius + da + h, radius + db:radius + db + w]
            t = np.fmin(np.abs(v - center) * inv_step, tmax)
            k = t.astype(np.int64)
            wr = lut[k] + (t - k) * (lut[k + 1] - lut[k])
            wt = spatial[a, b] * wr
            num = num + wt * v
            den = den + wt
    return num / den


def apply_swaps(perm, targets):
    for i in range(perm.shape[0] - 1, 0, -1):
        j = int(targets[i])
        perm[i], perm[j] = perm[j], perm[i]
