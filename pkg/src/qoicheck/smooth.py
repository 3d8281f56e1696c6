"""Low-rank bivariate radial smooth with a random-effects reparameterization.

The penalized part of the basis is transformed by the penalty eigenvectors U
and scaled by the square roots of the eigenvalues D, so its coefficients
become i.i.d. Normal(0, sigma_s^2) random effects under an identity penalty.
The two unpenalized slope columns keep their own Normal priors and the
intercept is absorbed by the response model.

Prediction on any reference dataset reuses the stored knots, U, D and column
means from the estimation data; nothing is ever refit to the new data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .models import Dataset, ParameterDraw
from .rngdist import ParameterError

_ZERO_EIG_REL_TOL = 1e-9


class ConditioningError(RuntimeError):
    """The knot layout produced a numerically rank-deficient basis."""


def radial_kernel(r: np.ndarray) -> np.ndarray:
    """Thin-plate style kernel eta(r) = r^2 log(r), with eta(0) = 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    nz = r > 0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


def _halton(n: int, base: int) -> np.ndarray:
    seq = np.empty(n)
    for i in range(1, n + 1):
        f, inv, x = i, 1.0, 0.0
        while f > 0:
            inv /= base
            x += inv * (f % base)
            f //= base
        seq[i - 1] = x
    return seq


@dataclass
class SmoothReparam:
    """Frozen transformation state shared by fitting and all predictions."""

    knots: np.ndarray          # kappa x 2
    penalty_S: np.ndarray      # kappa x kappa, PSD
    U: np.ndarray              # kappa x kappa orthogonal, eigenvalues ascending
    D: np.ndarray              # kappa sqrt-eigenvalues
    L: int                     # penalized column count
    x1_means: np.ndarray       # centering means of the two slope columns
    x2_means: np.ndarray       # centering means of the L penalized columns
    null_dim: int = 2

    def to_json(self) -> dict:
        return {
            "knots": self.knots.tolist(),
            "U": self.U.tolist(),
            "D": self.D.tolist(),
            "L": self.L,
            "null_dim": self.null_dim,
            "centering_means": {
                "x1": self.x1_means.tolist(),
                "x2": self.x2_means.tolist(),
            },
        }


def _raw_radial(points_x: np.ndarray, points_z: np.ndarray, knots: np.ndarray) -> np.ndarray:
    dx = points_x[:, None] - knots[None, :, 0]
    dz = points_z[:, None] - knots[None, :, 1]
    return radial_kernel(np.sqrt(dx * dx + dz * dz))


def build_smooth(data: Dataset, k: int) -> SmoothReparam:
    """Build the reparameterized basis from estimation data.

    Knots sit on the marginal empirical quantiles of (x, z) at Halton
    fractions, so the layout is deterministic and adapts to the data.
    """
    if data.z is None:
        raise ParameterError("smooth basis needs both x and z columns")
    kappa = k - 3
    if kappa < 1:
        raise ParameterError(f"need k - 3 >= 1 knots, got k={k}")
    qx = np.quantile(data.x, _halton(kappa, 2))
    qz = np.quantile(data.z, _halton(kappa, 3))
    knots = np.column_stack([qx, qz])

    diff = knots[:, None, :] - knots[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    if kappa > 1 and dist[~np.eye(kappa, dtype=bool)].min() < 1e-8:
        raise ConditioningError("duplicate knots; estimation data too degenerate")

    E = radial_kernel(dist)
    T = np.column_stack([np.ones(kappa), knots])
    Q, _ = np.linalg.qr(T)
    P = np.eye(kappa) - Q @ Q.T
    S = P @ E @ P
    S = 0.5 * (S + S.T)

    eigvals, U = np.linalg.eigh(S)
    # Tolerances sit on the kernel-matrix scale: after projecting out the
    # 3-dim polynomial space, S can be numerically zero (kappa == 3) and a
    # top-eigenvalue-relative test would misread rounding noise.
    scale = max(float(np.abs(E).max()), 1e-30)
    if eigvals.min() < -1e-8 * scale:
        raise ConditioningError("penalty matrix is not positive semi-definite")
    penalized = eigvals > _ZERO_EIG_REL_TOL * scale
    L = int(penalized.sum())
    expected_null = min(3, kappa)
    if kappa - L != expected_null:
        raise ConditioningError(
            f"rank-deficient basis: {kappa - L} zero eigenvalues, expected {expected_null}"
        )
    # sub-tolerance eigenvalues are zeroed so D > 0 marks exactly the
    # penalized columns
    eigvals = np.where(penalized, np.clip(eigvals, 0.0, None), 0.0)
    D = np.sqrt(eigvals)

    x2_raw = _raw_radial(data.x, data.z, knots) @ U[:, penalized] / D[penalized]
    x1_raw = np.column_stack([data.x, data.z])
    return SmoothReparam(
        knots=knots,
        penalty_S=S,
        U=U,
        D=D,
        L=L,
        x1_means=x1_raw.mean(axis=0),
        x2_means=x2_raw.mean(axis=0),
    )


def design_matrix(reparam: SmoothReparam, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(X1, X2) at the data rows, using only the stored transformation state."""
    if data.z is None:
        raise ParameterError("smooth design needs both x and z columns")
    if ((data.x < 0) | (data.x > 1) | (data.z < 0) | (data.z > 1)).any():
        warnings.warn("evaluating smooth outside the (0,1) support", stacklevel=2)
    penalized = reparam.D > 0
    x2 = _raw_radial(data.x, data.z, reparam.knots) @ reparam.U[:, penalized]
    x2 /= reparam.D[penalized]
    x1 = np.column_stack([data.x, data.z])
    return x1 - reparam.x1_means, x2 - reparam.x2_means


def evaluate_smooth(reparam: SmoothReparam, params: ParameterDraw, data: Dataset) -> np.ndarray:
    """f(x, z) per row; the model adds its own intercept."""
    x1, x2 = design_matrix(reparam, data)
    v = params.values
    try:
        b = np.array([v[f"b_{l}"] for l in range(1, reparam.L + 1)])
    except KeyError as exc:
        raise ParameterError(
            f"draw is missing penalized coefficients b_1..b_{reparam.L}"
        ) from exc
    return x1 @ np.array([v["beta_s1"], v["beta_s2"]]) + (x2 @ b if reparam.L else 0.0)
