"""Probability weighted moments and the scale-invariant tail ratio omega."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

# |2 a1 - a0| below this fraction of a0 counts as a degenerate denominator
DEGENERACY_TOL = 1e-9


class PwmTriple(NamedTuple):
    alpha0: float
    alpha1: float
    alpha2: float


def pwm_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Order-statistic weights for the unbiased estimators of alpha_1 and alpha_2.

    Weight j (1-based, ascending order) is (j-1)/(n-1) for alpha_1 and
    (j-1)(j-2)/((n-1)(n-2)) for alpha_2.
    """
    j = np.arange(n, dtype=float)
    w1 = j / (n - 1)
    w2 = j * (j - 1) / ((n - 1) * (n - 2))
    return w1, w2


def estimate_pwm(sample) -> PwmTriple:
    """Unbiased estimates of alpha_i = E[Z F(Z)^i] for i = 0, 1, 2.

    Args:
        sample: strictly positive values, at least three of them.

    Returns:
        The three moment estimates, in the units of the sample.
    """
    z = np.sort(np.asarray(sample, dtype=float).ravel())
    n = z.size
    if n < 3:
        raise ValueError(f"need at least 3 values to estimate alpha_0..alpha_2, got {n}")
    if not np.all(np.isfinite(z)):
        raise ValueError("sample contains non-finite values")
    if z[0] <= 0:
        raise ValueError("sample must be strictly positive")
    w1, w2 = pwm_weights(n)
    return PwmTriple(float(z.mean()), float(np.dot(w1, z) / n), float(np.dot(w2, z) / n))


def omega_from_pwm(alphas: PwmTriple) -> float:
    """(3 a2 - 2 a1) / (2 a1 - a0), or nan when the denominator is degenerate."""
    a0, a1, a2 = alphas
    denom = 2.0 * a1 - a0
    if abs(denom) <= DEGENERACY_TOL * abs(a0):
        return math.nan
    return (3.0 * a2 - 2.0 * a1) / denom


def omega(sample) -> float:
    """Scale-invariant PWM ratio of a positive sample.

    Returns nan for near-constant samples whose denominator 2 a1 - a0
    vanishes; callers treat nan as a degenerate flag.
    """
    return omega_from_pwm(estimate_pwm(sample))


def omega_distance(omega_i: float, omega_j: float) -> float:
    if not (math.isfinite(omega_i) and math.isfinite(omega_j)):
        raise ValueError("omega distance needs finite values")
    return abs(omega_i - omega_j)


@dataclass
class OmegaField:
    """Per-site omega for one season.

    ``omega`` is nan where the site is degenerate or had too few wet days.
    """

    site_ids: list[str]
    season: str
    omega: np.ndarray
    n_used: np.ndarray
    n_fit: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        n = len(self.site_ids)
        for name in ("omega", "n_used", "n_fit", "lon", "lat"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"OmegaField.{name} has length {len(getattr(self, name))}, expected {n}")

    @property
    def degenerate(self) -> np.ndarray:
        return ~np.isfinite(self.omega)

    def __len__(self) -> int:
        return len(self.site_ids)

    @classmethod
    def from_samples(cls, samples, season: str | None = None) -> OmegaField:
        """Build the field from SeasonalWetSample objects (all wet days feed omega)."""
        samples = list(samples)
        values = []
        for s in samples:
            values.append(omega(s.wet_values) if s.wet_values.size >= 3 else math.nan)
        return cls(
            site_ids=[s.site_id for s in samples],
            season=season or (samples[0].season if samples else ""),
            omega=np.array(values, dtype=float),
            n_used=np.array([s.wet_values.size for s in samples], dtype=int),
            n_fit=np.array([s.fit.size for s in samples], dtype=int),
            lon=np.array([s.lon for s in samples], dtype=float),
            lat=np.array([s.lat for s in samples], dtype=float),
            metadata={"omega_sample": "all wet days"},
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site_id", "lon", "lat", "season", "omega", "n_fit"])
            for i, sid in enumerate(self.site_ids):
                w.writerow([sid, repr(float(self.lon[i])), repr(float(self.lat[i])), self.season,
                            repr(float(self.omega[i])), int(self.n_fit[i])])
