"""Knob machinery: infer a user representation, replace one supervised latent
dimension with the prior inverse CDF of a knob value in [0, 1], decode, rank."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, decode, encode

KNOB_EPS = 1e-6  # clamp: the Gaussian inverse CDF is infinite at 0 and 1


class ControlError(ValueError):
    pass


@dataclass
class KnobMapping:
    """Injective map from supervised factor index to latent dimension."""

    dims: np.ndarray  # dims[j] = latent dim of factor j

    def __post_init__(self):
        self.dims = np.asarray(self.dims, dtype=np.int64)
        if len(np.unique(self.dims)) != len(self.dims):
            raise ControlError("knob mapping must be injective")

    @classmethod
    def identity(cls, n_factors: int) -> "KnobMapping":
        return cls(dims=np.arange(n_factors))

    def dim_of(self, factor: int) -> int:
        if not 0 <= factor < len(self.dims):
            raise ControlError(f"factor {factor} has no mapped latent dimension")
        return int(self.dims[factor])


@dataclass
class KnobSetting:
    factor: int
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ControlError(f"knob value {self.value} outside [0, 1]")


@dataclass
class RankedList:
    """Items in descending score order; ties break toward the lower index."""

    items: np.ndarray
    scores: np.ndarray


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# Acklam's rational approximation to the standard normal inverse CDF.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _ndtri_approx(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) /
                ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) /
                 ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q /
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


def knob_to_latent(v: float) -> float:
    """Standard-normal inverse CDF of a knob value, clamped to the interior.

    Rational approximation plus one Newton refinement; strictly increasing,
    exact 0 at v = 0.5.
    """
    if not 0.0 <= v <= 1.0:
        raise ControlError(f"knob value {v} outside [0, 1]")
    p = min(max(v, KNOB_EPS), 1.0 - KNOB_EPS)
    if p == 0.5:
        return 0.0
    x = _ndtri_approx(p)
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return x - (normal_cdf(x) - p) / pdf


def infer_representation(params: ModelParams, fold_in_items) -> np.ndarray:
    """Mean posterior vector for a binary row built from the fold-in items."""
    fold_in_items = np.asarray(fold_in_items, dtype=np.int64)
    if fold_in_items.size == 0:
        raise ControlError("empty fold-in item list")
    x = np.zeros((1, params.n_items))
    x[0, fold_in_items] = 1.0
    mu, _ = encode(params, x)
    return mu[0]


def manipulate(z: np.ndarray, knob: KnobSetting, mapping: KnobMapping) -> np.ndarray:
    """Copy of z with exactly the mapped dimension replaced by the knob's
    latent value; every other coordinate is bit-identical."""
    z_bar = z.copy()
    z_bar[mapping.dim_of(knob.factor)] = knob_to_latent(knob.value)
    return z_bar


def recommend(params: ModelParams, z: np.ndarray, exclude=(), n: int = 100) -> RankedList:
    """Top-n items by decoder log-likelihood, excluded items removed."""
    if n < 1:
        raise ControlError("n must be >= 1")
    scores = decode(params, z.reshape(1, -1))[0]
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        excl = np.zeros(params.n_items, dtype=bool)
        excl[np.asarray(list(exclude), dtype=np.int64)] = True
        order = order[~excl[order]]
    top = order[:n]
    return RankedList(items=top, scores=scores[top])
