"""Single-compartment CBF quantification for pCASL.

For a single post-label delay, CBF in mL/100g/min relates linearly to the
perfusion-weighted difference dM via

          6000 * beta * dM * exp(PLD / T1b)
    CBF = ----------------------------------------------
          2 * alpha * T1b_s * SI_PD * (1 - exp(-tau / T1b))

with times in ms inside the exponentials, T1b_s the blood T1 in seconds,
and the 6000 factor converting mL/g/s to mL/100g/min. Everything except
SI_PD is a global constant of the acquisition, so quantification is a
per-voxel multiplication by K / SI_PD(v).

Defaults follow the consensus pCASL recommendations: beta = 0.9 mL/g,
T1b = 1650 ms, alpha = 0.85.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProtonDensityError, InvalidParametersError
from .image import Image2D, as_mask, require_same_shape


@dataclass(frozen=True)
class AcquisitionParams:
    """Constant set of the quantification model.

    beta   brain-blood partition coefficient [mL/g]
    t1b    longitudinal relaxation time of blood [ms]
    alpha  labeling efficiency, in (0, 1]
    tau    label duration [ms]
    pld    post-label delay [ms]
    """

    beta: float = 0.9
    t1b: float = 1650.0
    alpha: float = 0.85
    tau: float = 1600.0
    pld: float = 2200.0

    def __post_init__(self):
        for name in ("beta", "t1b", "alpha", "tau", "pld"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidParametersError(f"{name} must be finite and > 0, got {v!r}")
        if self.alpha > 1.0:
            raise InvalidParametersError(f"alpha must be <= 1, got {self.alpha}")


@dataclass(frozen=True)
class CbfScaleMap:
    """Per-voxel linear factor mapping dM to CBF (mL/100g/min per unit dM).

    Voxels outside the brain mask carry a sentinel of 0 and are excluded
    from all downstream metrics.
    """

    scale: Image2D

    @property
    def mask(self) -> np.ndarray:
        return self.scale.data > 0.0


def kinetic_constant(params: AcquisitionParams) -> float:
    """SI_PD-independent factor K of the quantification model."""
    t1b_s = params.t1b / 1000.0
    k = (6000.0 * params.beta * math.exp(params.pld / params.t1b)) / (
        2.0 * params.alpha * t1b_s * (1.0 - math.exp(-params.tau / params.t1b))
    )
    if not math.isfinite(k) or k <= 0:
        raise InvalidParametersError(f"kinetic constant is not finite/positive: {k!r}")
    return k


def scale_map(params: AcquisitionParams, si_pd: Image2D, mask: Image2D) -> CbfScaleMap:
    """Per-voxel scale K / SI_PD(v) inside the mask, 0 outside."""
    require_same_shape(si_pd, mask)
    k = kinetic_constant(params)
    inside = as_mask(mask)
    bad = inside & (si_pd.data <= 0.0)
    if np.any(bad):
        r, c = np.argwhere(bad)[0]
        raise DegenerateProtonDensityError(
            f"masked voxel (row={r}, col={c}) has SI_PD={si_pd.data[r, c]!r} <= 0"
        )
    scale = np.zeros_like(si_pd.data)
    np.divide(k, si_pd.data, out=scale, where=inside)
    return CbfScaleMap(scale=si_pd.like(scale))


def quantify_cbf(dm: Image2D, scale: CbfScaleMap) -> Image2D:
    """CBF map scale(v) * dM(v); zero outside the mask by the 0 sentinel."""
    require_same_shape(dm, scale.scale)
    return dm.like(scale.scale.data * dm.data)


def invert_cbf(cbf: Image2D, scale: CbfScaleMap) -> Image2D:
    """Noise-free dM producing the given CBF map: dM = CBF / scale on the mask.

    Exact algebraic inverse of :func:`quantify_cbf` on masked voxels.
    """
    require_same_shape(cbf, scale.scale)
    inside = scale.mask
    if np.any(cbf.data[~inside] != 0.0):
        raise DegenerateProtonDensityError(
            "nonzero CBF outside the scale map's mask cannot be inverted"
        )
    dm = np.zeros_like(cbf.data)
    np.divide(cbf.data, scale.scale.data, out=dm, where=inside)
    return cbf.like(dm)
