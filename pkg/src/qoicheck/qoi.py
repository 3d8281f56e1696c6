"""Quantity-of-interest calculators.

Case study one: three versions of the expected response at a covariate value
-- (a) conditional on a zero group effect, (b) marginal over group effects,
(c) the sample mean of predictive simulations on a prediction structure.
Case study two: conditional expectations over the z margin and the functional
ANOVA decomposition of the fitted surface under two averaging operators.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridstruct import extend_parameters_gaussian, extend_parameters_uncertainty
from .models import (
    Dataset,
    ModelSpec,
    ParameterDraw,
    TAG_REFGRID,
    TAG_REPLICATE,
    simulate_response,
)
from .rngdist import ParameterError, SeedStream
from .smooth import SmoothReparam, evaluate_smooth

SAMPLING_GAUSSIAN = "gaussian"
SAMPLING_UNCERTAINTY = "uncertainty"

WEIGHTED = "weighted"
UNIFORM = "uniform"

# comparison-matrix letters follow the uniformity-check row definitions:
# A = reference grid, B = replicate, G = gaussian, u = uncertainty sampling
_STRUCTURE_LETTER = {TAG_REFGRID: "A", TAG_REPLICATE: "B"}
_SAMPLING_LETTER = {SAMPLING_GAUSSIAN: "G", SAMPLING_UNCERTAINTY: "u"}


@dataclass(frozen=True)
class QoiLabel:
    """Identifier of one QOI version, e.g. (a), (b) or (c,A,G)."""

    version: str
    structure: str | None = None
    sampling: str | None = None

    def __post_init__(self) -> None:
        if self.version not in ("a", "b", "c"):
            raise ParameterError(f"unknown QOI version {self.version!r}")
        has_parts = self.structure is not None and self.sampling is not None
        if (self.version == "c") != has_parts:
            raise ParameterError(
                "structure and sampling must be given exactly for version (c)"
            )

    def render(self) -> str:
        if self.version != "c":
            return f"({self.version})"
        return f"(c,{_STRUCTURE_LETTER[self.structure]},{_SAMPLING_LETTER[self.sampling]})"

    @classmethod
    def parse(cls, text: str) -> "QoiLabel":
        body = text.strip().strip("()")
        parts = [p.strip() for p in body.split(",")]
        if parts[0] in ("a", "b") and len(parts) == 1:
            return cls(parts[0])
        if parts[0] == "c" and len(parts) == 3:
            structures = {v: k for k, v in _STRUCTURE_LETTER.items()}
            samplings = {v: k for k, v in _SAMPLING_LETTER.items()}
            if parts[1] in structures and parts[2] in samplings:
                return cls("c", structures[parts[1]], samplings[parts[2]])
        raise ParameterError(f"cannot parse QOI label {text!r}")


def qoi_version_a(params: ParameterDraw, x: float) -> float:
    """exp(beta0 + beta1 x): expectation conditional on a zero group effect."""
    v = params.values
    return math.exp(v["beta0"] + v["beta1"] * x)


def qoi_version_b(params: ParameterDraw, x: float) -> float:
    """exp(beta0 + beta1 x + sigma_gamma^2 / 2): marginal over group effects."""
    v = params.values
    return math.exp(v["beta0"] + v["beta1"] * x + 0.5 * v["sigma_gamma"] ** 2)


def predict(
    spec: ModelSpec,
    params: ParameterDraw,
    data: Dataset,
    stream: SeedStream,
    basis: SmoothReparam | None = None,
) -> np.ndarray:
    """One response draw per row, observation noise included."""
    return simulate_response(spec, params, data, stream, basis=basis).y


def qoi_version_c(
    spec: ModelSpec,
    params: ParameterDraw,
    grid: Dataset,
    sampling: str,
    stream: SeedStream,
) -> float:
    """Sample mean of one predictive simulation on the structure.

    New-level coefficients and observation noise are redrawn on every
    invocation, so repeated calls on the same draw differ by Monte Carlo
    noise by design.
    """
    if grid.tag not in (TAG_REPLICATE, TAG_REFGRID):
        raise ParameterError(f"version (c) needs a prediction structure, got {grid.tag!r}")
    new_levels = grid.level_registry
    if sampling == SAMPLING_GAUSSIAN:
        extended = extend_parameters_gaussian(params, new_levels, stream)
    elif sampling == SAMPLING_UNCERTAINTY:
        existing = [int(lev) for lev in range(1, spec.G + 1)]
        extended = extend_parameters_uncertainty(params, existing, new_levels, stream)
    else:
        raise ParameterError(f"unknown new-level sampling {sampling!r}")
    return float(predict(spec, extended, grid, stream).mean())


@dataclass
class AnovaComponents:
    """Functional ANOVA split of a grid-tabulated surface."""

    f_empty: float
    f_x: np.ndarray
    f_z: np.ndarray
    f_xz: np.ndarray
    weight_scheme: str
    x_weights: np.ndarray
    z_weights: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["component", "i", "j", "value"])
            writer.writerow(["f_empty", "", "", repr(self.f_empty)])
            for i, val in enumerate(self.f_x):
                writer.writerow(["f_x", i, "", repr(float(val))])
            for j, val in enumerate(self.f_z):
                writer.writerow(["f_z", "", j, repr(float(val))])
            for i in range(self.f_xz.shape[0]):
                for j in range(self.f_xz.shape[1]):
                    writer.writerow(["f_xz", i, j, repr(float(self.f_xz[i, j]))])


def _normalize_weights(weights: np.ndarray, n: int, scheme: str, axis: str) -> np.ndarray:
    if scheme == UNIFORM:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ParameterError(f"{axis}-weights length {w.shape} does not match grid {n}")
    if (w < 0).any():
        raise ParameterError(f"negative {axis}-weights")
    total = w.sum()
    if total <= 0:
        raise ParameterError(f"{axis}-weights sum to zero")
    return w / total


def anova_decompose(
    f_values: np.ndarray,
    x_weights: np.ndarray | None,
    z_weights: np.ndarray | None,
    scheme: str = WEIGHTED,
) -> AnovaComponents:
    """Split f into intercept, centered main effects and interaction.

    The interaction is the residual f - f_empty - f_x - f_z, which makes the
    additive identity exact by construction; the weighted means of the main
    effects vanish up to quadrature tolerance.
    """
    F = np.asarray(f_values, dtype=float)
    if F.ndim != 2:
        raise ParameterError("f_values must be a 2-d (x, z) table")
    wx = _normalize_weights(x_weights, F.shape[0], scheme, "x")
    wz = _normalize_weights(z_weights, F.shape[1], scheme, "z")
    f_empty = float(wx @ F @ wz)
    f_x = F @ wz - f_empty
    f_z = wx @ F - f_empty
    f_xz = F - f_empty - f_x[:, None] - f_z[None, :]
    return AnovaComponents(f_empty, f_x, f_z, f_xz, scheme, wx, wz)


def beta_margin_weights(mean_logit: float, precision: float, grid: np.ndarray) -> np.ndarray:
    """Normalized Beta(mean=logistic(mean_logit), precision) weights on a grid."""
    mu = 1.0 / (1.0 + math.exp(-mean_logit))
    a, b = mu * precision, (1.0 - mu) * precision
    g = np.asarray(grid, dtype=float)
    if ((g <= 0) | (g >= 1)).any():
        raise ParameterError("weight grid must lie strictly inside (0,1)")
    logw = (a - 1.0) * np.log(g) + (b - 1.0) * np.log1p(-g)
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def beta_density_weights(params: ParameterDraw, z_grid: np.ndarray) -> np.ndarray:
    """Weights on the z margin from the draw's own Beta covariate model."""
    v = params.values
    return beta_margin_weights(v["beta0_z"], v["phi_z"], z_grid)


def qoi_cs2_conditional_expectation(
    params: ParameterDraw,
    reparam: SmoothReparam,
    x_fixed: float,
    z_grid: np.ndarray,
    scheme: str = WEIGHTED,
) -> float:
    """E(y | x = x_fixed) with the z margin averaged out.

    Under the weighted scheme the z weights come from the same draw's Beta
    parameters; the uniform scheme ignores the estimated z distribution.
    """
    z = np.asarray(z_grid, dtype=float)
    data = Dataset(np.full(z.shape[0], float(x_fixed)), "xz_grid", z=z)
    f = evaluate_smooth(reparam, params, data)
    if scheme == WEIGHTED:
        w = beta_density_weights(params, z)
    elif scheme == UNIFORM:
        w = np.full(z.shape[0], 1.0 / z.shape[0])
    else:
        raise ParameterError(f"unknown weight scheme {scheme!r}")
    return float(params.values["beta0_y"] + w @ f)
