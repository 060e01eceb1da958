"""Porous-medium pressure law and its band-limited cutoff.

The pressure p(u) = m/(m-1) u^{m-1} is flattened below a small density and
above a large one, with C^3 polynomial blends on the transition bands
(lam, 2 lam) and (1/lam, 2/lam).  Outside the bands the cutoff coincides
with the constant caps and with p itself exactly, not approximately.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError


def pressure(u, m: float):
    """Pressure p(u) = m/(m-1) u^{m-1} for u >= 0."""
    if m <= 1:
        raise ValueError(f"pressure exponent must exceed 1, got m={m}")
    u = np.asarray(u, dtype=float)
    val = (m / (m - 1.0)) * u ** (m - 1.0)
    return float(val) if np.ndim(val) == 0 else val


def pressure_prime(u, m: float):
    """dp/du = m u^{m-2}."""
    if m <= 1:
        raise ValueError(f"pressure exponent must exceed 1, got m={m}")
    u = np.asarray(u, dtype=float)
    val = m * u ** (m - 2.0)
    return float(val) if np.ndim(val) == 0 else val


def _p_derivatives(r: float, m: float):
    """(p, p', p'', p''') at r > 0."""
    c = m / (m - 1.0)
    return np.array(
        [
            c * r ** (m - 1.0),
            m * r ** (m - 2.0),
            m * (m - 2.0) * r ** (m - 3.0),
            m * (m - 2.0) * (m - 3.0) * r ** (m - 4.0),
        ]
    )


def _hermite7(f0, f1):
    """Degree-7 coefficients matching value and three derivatives at t=0 and t=1."""
    a = np.zeros((8, 8))
    for k in range(4):
        a[k, k] = math.factorial(k)
        for j in range(k, 8):
            a[4 + k, j] = math.factorial(j) / math.factorial(j - k)
    return np.linalg.solve(a, np.concatenate([f0, f1]))


def _polyder(c):
    return np.array([(j + 1) * c[j + 1] for j in range(len(c) - 1)])


class CutoffPressure:
    """Band-limited pressure with monotone C^3 blends.

    Regions for r > 0:
      (0, lam]            constant p(lam)
      (lam, 2 lam)        degree-7 Hermite blend
      [2 lam, 1/lam]      p(r) exactly
      (1/lam, 2/lam)      degree-7 Hermite blend
      [2/lam, inf)        constant p(2/lam)

    Requires m = 2 or m >= 3 and lam < 1/2 so the bands stay disjoint.
    """

    def __init__(self, m: float, lam: float):
        if not (m == 2.0 or m >= 3.0):
            raise ConfigError(f"m must be 2 or >= 3, got m={m}")
        if not (0.0 < lam < 0.5):
            raise ConfigError(f"lam must lie in (0, 1/2), got lam={lam}")
        self.m = float(m)
        self.lam = float(lam)
        self.low_value = pressure(lam, m)
        self.high_value = pressure(2.0 / lam, m)

        # Lower band (lam, 2 lam): from the constant cap into p.
        w = lam
        f0 = np.array([self.low_value, 0.0, 0.0, 0.0])
        f1 = _p_derivatives(2.0 * lam, m) * np.array([1.0, w, w * w, w**3])
        self.low_coeffs = _hermite7(f0, f1)
        # Upper band (1/lam, 2/lam): from p into the constant cap.
        w = 1.0 / lam
        f0 = _p_derivatives(1.0 / lam, m) * np.array([1.0, w, w * w, w**3])
        f1 = np.array([self.high_value, 0.0, 0.0, 0.0])
        self.high_coeffs = _hermite7(f0, f1)

        self.low_d1 = _polyder(self.low_coeffs) / lam
        self.low_d2 = _polyder(_polyder(self.low_coeffs)) / lam**2
        self.high_d1 = _polyder(self.high_coeffs) * lam
        self.high_d2 = _polyder(_polyder(self.high_coeffs)) * lam**2
        self._check_monotone()

    def _check_monotone(self):
        t = np.linspace(0.0, 1.0, 2001)
        for d1 in (self.low_d1, self.high_d1):
            vals = np.polynomial.polynomial.polyval(t, d1)
            scale = max(np.max(np.abs(vals)), 1e-300)
            if np.min(vals) < -1e-10 * scale:
                raise ConfigError(
                    f"pressure blend is not monotone for m={self.m}, lam={self.lam}"
                )

    def _regions(self, r):
        lam = self.lam
        return (
            r <= lam,
            (r > lam) & (r < 2.0 * lam),
            (r >= 2.0 * lam) & (r <= 1.0 / lam),
            (r > 1.0 / lam) & (r < 2.0 / lam),
            r >= 2.0 / lam,
        )

    def value(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        lo, blo, mid, bhi, hi = self._regions(r)
        out = np.empty_like(r)
        out[lo] = self.low_value
        out[blo] = np.polynomial.polynomial.polyval(
            (r[blo] - self.lam) / self.lam, self.low_coeffs
        )
        out[mid] = pressure(r[mid], self.m)
        out[bhi] = np.polynomial.polynomial.polyval(
            (r[bhi] - 1.0 / self.lam) * self.lam, self.high_coeffs
        )
        out[hi] = self.high_value
        return float(out[0]) if scalar else out

    def prime(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        lo, blo, mid, bhi, hi = self._regions(r)
        out = np.empty_like(r)
        out[lo] = 0.0
        out[blo] = np.polynomial.polynomial.polyval(
            (r[blo] - self.lam) / self.lam, self.low_d1
        )
        out[mid] = pressure_prime(r[mid], self.m)
        out[bhi] = np.polynomial.polynomial.polyval(
            (r[bhi] - 1.0 / self.lam) * self.lam, self.high_d1
        )
        out[hi] = 0.0
        return float(out[0]) if scalar else out

    def second(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        lo, blo, mid, bhi, hi = self._regions(r)
        out = np.empty_like(r)
        out[lo] = 0.0
        m = self.m
        out[blo] = np.polynomial.polynomial.polyval(
            (r[blo] - self.lam) / self.lam, self.low_d2
        )
        out[mid] = m * (m - 2.0) * r[mid] ** (m - 3.0)
        out[bhi] = np.polynomial.polynomial.polyval(
            (r[bhi] - 1.0 / self.lam) * self.lam, self.high_d2
        )
        out[hi] = 0.0
        return float(out[0]) if scalar else out

    __call__ = value

    def coincidence_sup_second(self) -> float:
        """sup |p''| over the coincidence region [2 lam, 1/lam].

        Used by the time-step cap: the blend bands are measure-lambda slivers
        whose curvature spikes do not govern the bulk dynamics, so the cap
        follows the smooth-range constants (zero for m = 2).
        """
        m = self.m
        if m == 2.0:
            return 0.0
        ends = np.array([2.0 * self.lam, 1.0 / self.lam])
        return float(np.max(np.abs(m * (m - 2.0) * ends ** (m - 3.0))))


def p_lambda_eval(r, cp: CutoffPressure):
    return cp.value(r)


def p_lambda_prime(r, cp: CutoffPressure):
    return cp.prime(r)


def p_lambda_second(r, cp: CutoffPressure):
    return cp.second(r)
