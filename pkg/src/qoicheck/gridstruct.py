"""Post-estimation data structures and new-level coefficient extensions.

Three structures are supported: a replicate of the estimation data's group
balance under fresh level ids, a reference grid of many fresh single-
observation levels, and an equidistant (x, z) grid for surface evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import (
    Dataset,
    ParameterDraw,
    TAG_REFGRID,
    TAG_REPLICATE,
    TAG_XZ_GRID,
)
from .rngdist import ParameterError, SeedStream, sample_normal

KIND_REPLICATE = "replicate"
KIND_REFGRID = "refgrid"
KIND_XZ_GRID = "xz_grid"


@dataclass(frozen=True)
class GridSpec:
    kind: str
    x_fixed: float | None = None
    n_new_levels: int = 200
    grid_resolution: int = 50

    def __post_init__(self) -> None:
        if self.kind not in (KIND_REPLICATE, KIND_REFGRID, KIND_XZ_GRID):
            raise ParameterError(f"unknown grid kind {self.kind!r}")
        if self.n_new_levels < 1:
            raise ParameterError("n_new_levels must be >= 1")
        if self.grid_resolution < 2:
            raise ParameterError("grid_resolution must be >= 2")


def build_replicate_structure(original: Dataset, spec: GridSpec) -> Dataset:
    """Copy the original group balance onto fresh levels at x = x_fixed.

    Original level i becomes fresh level G + i, so per-level counts are
    preserved under the relabeling bijection; y is cleared.
    """
    if original.group is None:
        raise ParameterError("replicate structure needs a group column")
    offset = max(original.level_registry)
    group = original.group + offset
    fresh = tuple(lev + offset for lev in original.level_registry)
    x = np.full(original.N, float(spec.x_fixed))
    return Dataset(x, TAG_REPLICATE, group=group, z=original.z, level_registry=fresh)


def build_reference_grid(spec: GridSpec, base_level_count: int) -> Dataset:
    """n_new_levels fresh singleton levels, one observation each at x_fixed."""
    if spec.kind != KIND_REFGRID:
        raise ParameterError("build_reference_grid needs a refgrid spec")
    levels = np.arange(base_level_count + 1, base_level_count + spec.n_new_levels + 1)
    x = np.full(spec.n_new_levels, float(spec.x_fixed))
    return Dataset(x, TAG_REFGRID, group=levels, level_registry=tuple(levels.tolist()))


def build_xz_grid(spec: GridSpec) -> Dataset:
    """Cartesian midpoint grid on (0,1)^2, grid_resolution points per axis."""
    if spec.kind != KIND_XZ_GRID:
        raise ParameterError("build_xz_grid needs an xz_grid spec")
    m = spec.grid_resolution
    axis = (np.arange(m) + 0.5) / m
    x = np.repeat(axis, m)
    z = np.tile(axis, m)
    return Dataset(x, TAG_XZ_GRID, z=z)


def grid_axis(resolution: int) -> np.ndarray:
    """The midpoint axis shared by both coordinates of the xz grid."""
    return (np.arange(resolution) + 0.5) / resolution


def extend_parameters_gaussian(
    params: ParameterDraw, new_levels, stream: SeedStream
) -> ParameterDraw:
    """Draw a fresh gamma ~ Normal(0, sigma_gamma^2) for each new level."""
    if "sigma_gamma" not in params.values:
        raise ParameterError("gaussian extension needs sigma_gamma in the draw")
    sd = params.values["sigma_gamma"]
    extension = dict(params.extension)
    for lev in new_levels:
        extension[f"gamma_{int(lev)}"] = sample_normal(0.0, sd, stream)
    return ParameterDraw(params.values, extension)


def extend_parameters_uncertainty(
    params: ParameterDraw, existing_levels, new_levels, stream: SeedStream
) -> ParameterDraw:
    """Copy the coefficient of a uniformly chosen existing level per new level."""
    existing = list(existing_levels)
    if not existing:
        raise ParameterError("uncertainty extension needs at least one existing level")
    new = list(new_levels)
    extension = dict(params.extension)
    if new:
        picks = stream.rng.integers(0, len(existing), size=len(new))
        for lev, pick in zip(new, picks):
            extension[f"gamma_{int(lev)}"] = params.coefficient(
                f"gamma_{int(existing[pick])}"
            )
    return ParameterDraw(params.values, extension)
