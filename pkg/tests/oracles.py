"""Loop-based reference implementations used only by the tests."""

import numpy as np


def box_count_dimension(surface, scales=(1, 2, 4, 8), eps=1e-8):
    """Local box-counting dimension of one 2-D surface by explicit loops."""
    s = np.asarray(surface, dtype=np.float64)
    h, w = s.shape
    z = (s - s.min()) / (s.max() - s.min() + eps) * max(h, w)
    window = max(scales)
    logr = np.log(scales)
    out = np.zeros((h - window, w - window))
    for i in range(h - window):
        for j in range(w - window):
            logn = []
            for r in scales:
                total = 0.0
                for a in range(window // r):
                    for b in range(window // r):
                        patch = z[i + a * r:i + a * r + r + 1, j + b * r:j + b * r + r + 1]
                        total += (patch.max() - patch.min()) / r + 1.0
                logn.append(np.log(total))
            slope = np.polyfit(logr, logn, 1)[0]
            out[i, j] = min(max(-slope, 0.0), 3.0)
    return out


def rbf_histogram(values, centers, log_widths):
    """values (R, P); centers/log_widths (R, B) -> mean membership (R, B)."""
    r, p = values.shape
    out = np.zeros(centers.shape)
    for c in range(r):
        for b in range(centers.shape[1]):
            g = np.exp(log_widths[c, b])
            out[c, b] = sum(np.exp(-g * (v - centers[c, b]) ** 2) for v in values[c]) / p
    return out
