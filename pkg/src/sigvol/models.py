"""Worked-example presets and kernel-expansion construction of ell.

Presets bundle the volatility symbol ell, the driving direction eta, a
weight, and the documented completeness-depth metadata (N_star, K).  The
Heston entry is metadata-only: no explicit tensor embedding is published
for it, so inventing coefficients would misstate provenance.

Kernel expansions turn a memory kernel into a finitely supported ell via

    int_0^t (t-s)^k dW_s^j = k! <e_{(j,0,...,0)}, W_t>   (k time letters),

so a Taylor-expanded kernel sum a_k u^k maps to coefficients a_k * k! on
the words (j, 0^k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algebra import GradedTensor, Weight, Word

INF = float("inf")

PRESET_NAMES = (
    "black_scholes",
    "first_order",
    "heston_meta",
    "rough_bergomi_approx",
    "quintic_ou_approx",
    "guyon_lekeufack_approx",
)


@dataclass(frozen=True)
class ModelPreset:
    name: str
    ell: GradedTensor | None
    eta: np.ndarray | None
    weight: Weight
    depth_meta: tuple[float, float | None]
    notes: str

    @property
    def metadata_only(self) -> bool:
        return self.ell is None


def kernel_expansion(kind: str, degree: int, brownian_letter: int, scale: float,
                     d: int | None = None, kappa: float = 1.0,
                     hurst: float = 0.1, t_star: float = 0.5) -> GradedTensor:
    """Finitely supported ell on words (j, 0^k), k <= degree.

    kind "exponential": scale * exp(-kappa u), Taylor-expanded at u = 0.
    kind "power": scale * u^(hurst - 1/2), Taylor-expanded at u = t_star;
    this is a demonstration-only approximation, non-uniform near u = 0 and
    deteriorating as the Hurst parameter approaches zero.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    j = int(brownian_letter)
    if j < 1:
        raise ValueError("brownian_letter must be >= 1")
    dim = d if d is not None else j
    if dim < j:
        raise ValueError("alphabet dimension smaller than the Brownian letter")
    coeffs: dict[Word, float] = {}
    if kind == "exponential":
        # a_k = scale (-kappa)^k / k!, times k! for the word normalisation
        for k in range(degree + 1):
            coeffs[(j,) + (0,) * k] = scale * (-kappa) ** k
    elif kind == "power":
        # Taylor of u^(h-1/2) at t_star: sum_k binom(h-1/2, k) t*^(h-1/2-k) (u-t*)^k,
        # re-expanded in powers of u, then scaled by k!
        h = hurst
        if not 0.0 < h < 0.5:
            raise ValueError("power kernel expects 0 < hurst < 1/2")
        if t_star <= 0.0:
            raise ValueError("t_star must be positive")
        poly = np.zeros(degree + 1)
        binom = 1.0
        for k in range(degree + 1):
            if k > 0:
                binom *= (h - 0.5 - (k - 1)) / k
            deriv_coeff = binom * t_star ** (h - 0.5 - k)
            # (u - t_star)^k expanded into monomials
            for i in range(k + 1):
                poly[i] += deriv_coeff * math.comb(k, i) * (-t_star) ** (k - i)
        for k in range(degree + 1):
            coeffs[(j,) + (0,) * k] = scale * poly[k] * math.factorial(k)
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    return GradedTensor(dim, degree + 1, coeffs)


def preset(name: str, sigma: float = 0.2, sigma0: float = 0.2, sigma1: float = 0.1,
           d: int | None = None) -> ModelPreset:
    """Named model presets; sigma defaults are configuration, not ground truth."""
    if name == "black_scholes":
        dim = d or 1
        ell = GradedTensor(dim, 0, {(): sigma})
        return ModelPreset(name, ell, _unit(dim, 1), Weight.geometric(2.0), (0, 1),
                           "constant volatility; dynamically complete")
    if name == "first_order":
        dim = d or 1
        ell = GradedTensor(dim, 1, {(): sigma0, (1,): sigma1})
        return ModelPreset(name, ell, _unit(dim, 1), Weight.geometric(2.0), (1, 2),
                           "volatility sigma0 + sigma1 * W^1; one static completion")
    if name == "heston_meta":
        return ModelPreset(name, None, None, Weight.geometric(2.0), (2, 4),
                           "metadata only: no explicit tensor embedding is published")
    if name == "rough_bergomi_approx":
        dim = d or 1
        ell = kernel_expansion("power", 5, 1, sigma1, d=dim)
        ell = GradedTensor(dim, ell.trunc, {(): sigma0, **ell.coeffs})
        return ModelPreset(name, ell, _unit(dim, 1), Weight.geometric(2.0), (INF, INF),
                           "power-kernel expansion; demonstration only, the "
                           "polynomial approximation is poor near zero lag and "
                           "no finite depth is exact")
    if name == "quintic_ou_approx":
        dim = d or 1
        ell = kernel_expansion("exponential", 4, 1, sigma1, d=dim, kappa=1.0)
        ell = GradedTensor(dim, ell.trunc, {(): sigma0, **ell.coeffs})
        return ModelPreset(name, ell, _unit(dim, 1), Weight.geometric(2.0), (5, None),
                           "exponential-kernel expansion with support up to depth "
                           "five; terminal static degree undocumented")
    if name == "guyon_lekeufack_approx":
        dim = d or 1
        fast = kernel_expansion("exponential", 3, 1, sigma1, d=dim, kappa=8.0)
        slow = kernel_expansion("exponential", 3, 1, 0.5 * sigma1, d=dim, kappa=1.0)
        ell = GradedTensor(dim, 4, {(): sigma0})
        ell = ell + fast + slow
        return ModelPreset(name, ell, _unit(dim, 1), Weight.geometric(2.0), (INF, INF),
                           "two-timescale exponential past-return kernels; depth "
                           "is kernel dependent, infinite for the untruncated family")
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


def _unit(d: int, j: int) -> np.ndarray:
    e = np.zeros(d)
    e[j - 1] = 1.0
    return e
