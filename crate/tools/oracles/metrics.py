"""Reference SSIM for metrics::tests::ssim_matches_reference_implementation."""
import numpy as np
from skimage.metrics import structural_similarity


def pattern(w, h, s, phase):
    x, y, b = np.meshgrid(np.arange(w), np.arange(h), np.arange(s), indexing="ij")
    x, y, b = x.astype(float), y.astype(float), b.astype(float)
    return 0.5 + 0.4 * np.sin(0.37 * x + 0.23 * y + phase * (b + 1.0)) * np.cos(0.11 * x * y + b)


r = pattern(16, 16, 2, 0.3)
e = pattern(16, 16, 2, 0.35)
vals = [
    structural_similarity(r[:, :, k], e[:, :, k], gaussian_weights=True, sigma=1.5,
                          use_sample_covariance=False, data_range=1.0)
    for k in range(2)
]
print(repr(float(np.mean(vals))))
