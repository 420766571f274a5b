"""Symmetric quadrature rules on the reference triangle.

The reference triangle is ``{(x, y): x, y >= 0, x + y <= 1}``; weights of
every rule sum to its area ``1/2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

__all__ = ["QuadratureRule", "quad_rule", "gauss_legendre_01"]


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points.T
        return np.column_stack([1.0 - x - y, x, y])

    def __len__(self) -> int:
        return len(self.weights)


def _s3(w):
    return [((1 / 3, 1 / 3, 1 / 3), w)]


def _s21(a, w):
    b = 1.0 - 2.0 * a
    return [((a, a, b), w), ((a, b, a), w), ((b, a, a), w)]


def _s111(a, b, w):
    c = 1.0 - a - b
    return [(p, w) for p in sorted(set(permutations((a, b, c))))]


_SQ15 = np.sqrt(15.0)

# Dunavant rules; weights normalized to sum 1. Degree 3 is served by the
# degree-4 rule (the 4-point degree-3 rule has a negative weight).
_RULES = {
    1: _s3(1.0),
    2: _s21(1 / 6, 1 / 3),
    4: _s21(0.44594849091596488632, 0.22338158967801146570)
    + _s21(0.09157621350977074346, 0.10995174365532186764),
    5: _s3(9 / 40)
    + _s21((6 - _SQ15) / 21, (155 - _SQ15) / 1200)
    + _s21((6 + _SQ15) / 21, (155 + _SQ15) / 1200),
    6: _s21(0.24928674517091042129, 0.11678627572637936603)
    + _s21(0.06308901449150222834, 0.050844906370206816921)
    + _s111(0.053145049844816947353, 0.31035245103378440542, 0.082851075618373575194),
}


def quad_rule(degree: int) -> QuadratureRule:
    """Return the cheapest tabulated rule exact for polynomials of ``degree``.

    Supported degrees are 1 through 6.
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= 6:
        raise ValueError(f"unsupported quadrature degree {degree!r}; expected 1..6")
    actual = min(d for d in _RULES if d >= degree)
    bary = np.array([p for p, _ in _RULES[actual]], dtype=float)
    weights = 0.5 * np.array([w for _, w in _RULES[actual]], dtype=float)
    return QuadratureRule(points=bary[:, 1:].copy(), weights=weights, degree=actual)


def gauss_legendre_01(npts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on ``[0, 1]``."""
    t, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (t + 1.0), 0.5 * w
