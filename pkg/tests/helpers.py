"""Shared test utilities."""

import numpy as np

from mflq import lq_model


def variance_stderr(samples) -> float:
    """Standard error of the unbiased sample variance, without assuming a
    Gaussian population: sqrt((m4 - s^4 (n-3)/(n-1)) / n) with m4 the 4th
    central moment. Equals s^2 sqrt(2/(n-1)) in the Gaussian case."""
    x = np.asarray(samples, float).ravel()
    n = x.size
    c = x - x.mean()
    s2 = (c @ c) / (n - 1)
    m4 = np.mean(c ** 4)
    return float(np.sqrt((m4 - s2 * s2 * (n - 3) / (n - 1)) / n))


def random_standard_model(rng, d=2, m=2, barred=True):
    """Random smooth LQ model satisfying the positivity condition (M2 = 0):
    Q2, P2 (and their barred sums) PSD, R2 (and R2+R2bar) >= 0.5 I."""

    def psd(n, scale=1.0):
        a = rng.standard_normal((n, n)) * scale
        return a @ a.T / n

    def mat(rows, cols, scale=0.6):
        return rng.standard_normal((rows, cols)) * scale

    Q2 = psd(d)
    R2 = psd(m) + 0.5 * np.eye(m)
    P2 = psd(d)
    kw = dict(
        b0=rng.standard_normal(d) * 0.3, B=mat(d, d), C=mat(d, m),
        sigma0=rng.standard_normal(d) * 0.3, D=mat(d, d, 0.4), F=mat(d, m, 0.4),
        Q2=Q2, R2=R2, P2=P2,
        q1=rng.standard_normal(d) * 0.3, r1=rng.standard_normal(m) * 0.3,
        p1=rng.standard_normal(d) * 0.3,
    )
    if barred:
        kw.update(
            Bbar=mat(d, d, 0.3), Cbar=mat(d, m, 0.3), Dbar=mat(d, d, 0.2),
            Fbar=mat(d, m, 0.2),
            Q2bar=psd(d, 0.5) - 0.5 * Q2,   # keeps Q2 + Q2bar >= 0
            R2bar=psd(m, 0.5),
            P2bar=psd(d, 0.5) - 0.5 * P2,
            q1bar=rng.standard_normal(d) * 0.3,
            r1bar=rng.standard_normal(m) * 0.3,
            p1bar=rng.standard_normal(d) * 0.3,
        )
    return lq_model(d=d, m=m, horizon=1.0, **kw)
