"""Polynomial correction of systematic center bias."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .core import solve_least_squares

DEFAULT_BIAS_RIDGE = 1e-6


def monomial_basis(degree: int = 3) -> List[Tuple[int, int, int]]:
    """Exponent triples of total degree <= ``degree``, graded, then lexicographically descending."""
    out = []
    for d in range(degree + 1):
        block = [(i, j, d - i - j) for i in range(d, -1, -1) for j in range(d - i, -1, -1)]
        out.extend(block)
    return out


@dataclass(frozen=True)
class PolyBasis:
    exponents: Tuple[Tuple[int, int, int], ...]

    def __post_init__(self):
        exps = tuple(tuple(int(v) for v in e) for e in self.exponents)
        if len(set(exps)) != len(exps):
            raise ValueError("duplicate monomial in basis")
        if any(len(e) != 3 or min(e) < 0 for e in exps):
            raise ValueError("exponents must be non-negative triples")
        if (0, 0, 0) not in exps:
            raise ValueError("basis must include the constant term")
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def full(cls, degree: int = 3) -> "PolyBasis":
        return cls(tuple(monomial_basis(degree)))

    @property
    def dim(self) -> int:
        return len(self.exponents)


def poly_features(p, basis: PolyBasis) -> np.ndarray:
    """Monomials of one point (shape (D,)) or many points (shape (n, D))."""
    P = np.asarray(p, dtype=np.float64)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    E = np.array(basis.exponents)
    top = int(E.max())
    pows = np.ones((P.shape[0], 3, top + 1))
    for k in range(1, top + 1):
        pows[:, :, k] = pows[:, :, k - 1] * P
    F = pows[:, 0, E[:, 0]] * pows[:, 1, E[:, 1]] * pows[:, 2, E[:, 2]]
    return F[0] if single else F


@dataclass
class BiasModel:
    basis: PolyBasis
    coeffs: np.ndarray               # (D, 3)
    residual_rms: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1, 3)
        if self.coeffs.shape[0] != self.basis.dim:
            raise ValueError("coefficient rows do not match basis dimension")

    def coefficient(self, exponent, axis: int) -> float:
        return float(self.coeffs[self.basis.exponents.index(tuple(exponent)), axis])

    @classmethod
    def zero(cls, basis: PolyBasis = None) -> "BiasModel":
        basis = basis or PolyBasis.full()
        return cls(basis, np.zeros((basis.dim, 3)))


def fit_bias(pred_centers, true_centers, basis: PolyBasis = None,
             ridge: float = DEFAULT_BIAS_RIDGE) -> BiasModel:
    """Regress ``true - pred`` on the monomials of ``pred``, one column per axis."""
    basis = basis or PolyBasis.full()
    P = np.asarray(pred_centers, dtype=np.float64).reshape(-1, 3)
    T = np.asarray(true_centers, dtype=np.float64).reshape(-1, 3)
    if P.shape != T.shape:
        raise ValueError(f"length mismatch: {len(P)} predictions vs {len(T)} truths")
    F = poly_features(P, basis)
    coeffs = solve_least_squares(F, T - P, ridge)
    resid = (T - P) - F @ coeffs
    rms = tuple(float(v) for v in np.sqrt(np.mean(resid ** 2, axis=0)))
    return BiasModel(basis, coeffs, rms)


def apply_bias(model: BiasModel, pred) -> np.ndarray:
    P = np.asarray(pred, dtype=np.float64)
    return P + poly_features(P, model.basis) @ model.coeffs


def save_bias(model: BiasModel, path) -> None:
    doc = {"basis": [list(e) for e in model.basis.exponents],
           "coeffs": [[float(v) for v in row] for row in model.coeffs]}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_bias(path) -> BiasModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        basis = PolyBasis(tuple(tuple(e) for e in doc["basis"]))
        return BiasModel(basis, np.array(doc["coeffs"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed bias model ({exc})") from None
