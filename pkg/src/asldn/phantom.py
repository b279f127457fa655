"""Synthetic multi-subject pCASL phantom generation.

Each subject is a stack of 2D slices. Per slice the chain is

    tissue fractions -> ground-truth CBF -> synthetic SI_PD -> clean dM
    -> per-voxel noise std -> noisy C/L subtraction repetitions,

with ground-truth CBF of 20 (WM) and 65 (GM) mL/100g/min and Gaussian
noise whose std is proportional to SI_PD (default kappa = 0.005, putting
the per-repetition grey-matter dM SNR near 1).

Geometry is procedural: an elliptical brain with a wavy outline, an outer
GM ribbon and an inner WM core. Partial volumes come from counting on a
4x supersampled grid, so wm + gm <= 1 holds exactly and every map is a
pure function of its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .errors import GeometryError, InvalidParametersError, ShapeMismatchError
from .image import Image2D, as_mask, require_same_shape
from .kinetics import AcquisitionParams, CbfScaleMap, invert_cbf, scale_map
from .rng import Stream, derive

CBF_WM = 20.0  # mL/100g/min
CBF_GM = 65.0
PD_WM = 0.70  # fraction of pd_scale
PD_GM = 0.85
FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

_SUPERSAMPLE = 4


@dataclass(frozen=True)
class TissueMaps:
    """WM/GM partial-volume fractions and the binary brain mask."""

    wm: Image2D
    gm: Image2D
    mask: Image2D

    def __post_init__(self):
        require_same_shape(self.wm, self.gm, self.mask)
        w, g = self.wm.data, self.gm.data
        if np.any(w < 0) or np.any(g < 0) or np.any(w + g > 1.0):
            raise GeometryError("tissue fractions must satisfy 0 <= wm, gm and wm+gm <= 1")
        outside = ~as_mask(self.mask)
        if np.any(w[outside] != 0) or np.any(g[outside] != 0):
            raise GeometryError("tissue fractions must vanish outside the mask")


@dataclass(frozen=True)
class PerfusionSeries:
    """Ordered C/L subtraction repetitions for one slice."""

    reps: tuple[Image2D, ...]

    def __post_init__(self):
        if len(self.reps) < 1:
            raise ShapeMismatchError("a perfusion series needs at least one repetition")
        require_same_shape(*self.reps)

    @property
    def count(self) -> int:
        return len(self.reps)

    def stack(self) -> np.ndarray:
        """(count, H, W) float64 view of the repetitions."""
        return np.stack([r.data for r in self.reps])


@dataclass(frozen=True)
class SubjectSlice:
    """All per-slice phantom products."""

    tissue: TissueMaps
    si_pd: Image2D
    cbf_truth: Image2D
    dm_clean: Image2D
    noise_std: Image2D
    repetitions: PerfusionSeries


@dataclass(frozen=True)
class PhantomSubject:
    subject_id: str
    seed: int
    slices: tuple[SubjectSlice, ...]


@dataclass(frozen=True)
class PhantomConfig:
    width: int = 128
    height: int = 128
    voxel_size: tuple[float, float] = (2.7, 2.7)
    slices: int = 4
    subjects: int = 4
    repetitions: int = 100
    kappa: float = 0.005
    pd_scale: float = 100.0
    smooth: bool = True
    smooth_fwhm_mm: float = 4.0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise GeometryError(f"phantom grid must be >= 64 voxels per side, got {self.width}x{self.height}")
        if self.slices < 1 or self.subjects < 1 or self.repetitions < 1:
            raise InvalidParametersError("slices, subjects and repetitions must be >= 1")
        if self.kappa <= 0 or self.pd_scale <= 0:
            raise InvalidParametersError("kappa and pd_scale must be > 0")
        if self.smooth_fwhm_mm < 0:
            raise InvalidParametersError("smoothing FWHM must be >= 0")


def generate_geometry(seed: int, width: int, height: int,
                      voxel_size: tuple[float, float] = (2.7, 2.7)) -> TissueMaps:
    """Procedural brain-like slice: wavy ellipse, GM ribbon, WM core.

    Deterministic in ``seed``; per-seed jitter of center, axes, ribbon
    thickness and outline waviness makes distinct seeds distinct subjects.
    """
    if width < 64 or height < 64:
        raise GeometryError(f"geometry needs width, height >= 64, got {width}x{height}")
    rng = Stream(seed)
    j = rng.uniforms(12)

    cx = width * (0.5 + 0.04 * (j[0] - 0.5))
    cy = height * (0.5 + 0.04 * (j[1] - 0.5))
    ax = 0.42 * width * (1.0 + 0.10 * (j[2] - 0.5))
    ay = 0.46 * height * (1.0 + 0.10 * (j[3] - 0.5))
    a2, p2 = 0.05 * j[4], 2.0 * math.pi * j[5]
    a3, p3 = 0.04 * j[6], 2.0 * math.pi * j[7]
    r_wm = 0.72 * (1.0 + 0.10 * (j[8] - 0.5))
    a4, p4 = 0.08 * j[9], 2.0 * math.pi * j[10]

    ss = _SUPERSAMPLE
    ys = (np.arange(height * ss) + 0.5) / ss
    xs = (np.arange(width * ss) + 0.5) / ss
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    u = (xx - cx) / ax
    v = (yy - cy) / ay
    r = np.sqrt(u * u + v * v)
    theta = np.arctan2(v, u)
    outline = 1.0 + a2 * np.cos(2.0 * theta + p2) + a3 * np.cos(3.0 * theta + p3)
    ribbon = 1.0 + a4 * np.cos(4.0 * theta + p4)
    r_eff = r / outline

    inside = r_eff <= 1.0
    wm_core = r_eff <= (r_wm * ribbon)
    gm_ring = inside & ~wm_core

    # box-average the indicator counts: dyadic fractions, wm+gm <= 1 exact
    def downsample(ind: np.ndarray) -> np.ndarray:
        c = ind.reshape(height, ss, width, ss).sum(axis=(1, 3))
        return c.astype(np.float64) / float(ss * ss)

    wm = downsample(wm_core)
    gm = downsample(gm_ring)
    mask = ((wm + gm) > 0.5).astype(np.float64)
    wm = wm * mask
    gm = gm * mask

    return TissueMaps(
        wm=Image2D(wm, voxel_size),
        gm=Image2D(gm, voxel_size),
        mask=Image2D(mask, voxel_size),
    )


def ground_truth_cbf(tissue: TissueMaps) -> Image2D:
    """Reference CBF map: 20 * wm + 65 * gm, zero outside the mask."""
    return tissue.wm.like(CBF_WM * tissue.wm.data + CBF_GM * tissue.gm.data)


def synth_si_pd(tissue: TissueMaps, pd_scale: float = 100.0) -> Image2D:
    """Synthetic proton-density image: pd_scale * (0.70 wm + 0.85 gm)."""
    if pd_scale <= 0:
        raise InvalidParametersError(f"pd_scale must be > 0, got {pd_scale}")
    inside = as_mask(tissue.mask)
    empty = inside & ((tissue.wm.data + tissue.gm.data) == 0.0)
    if np.any(empty):
        r, c = np.argwhere(empty)[0]
        raise GeometryError(f"masked voxel (row={r}, col={c}) has no tissue content")
    pd = pd_scale * (PD_WM * tissue.wm.data + PD_GM * tissue.gm.data)
    return tissue.wm.like(pd * inside)


def noise_std_map(si_pd: Image2D, kappa: float = 0.005) -> Image2D:
    """Per-voxel noise std kappa * SI_PD(v); zero outside the mask."""
    if not (kappa > 0):
        raise InvalidParametersError(f"kappa must be > 0, got {kappa}")
    return si_pd.like(kappa * si_pd.data)


def sample_repetitions(dm_clean: Image2D, std: Image2D, count: int, rng: Stream) -> PerfusionSeries:
    """``count`` independent noisy repetitions dm_clean + eps, eps ~ N(0, std^2)."""
    if count < 1:
        raise InvalidParametersError(f"repetition count must be >= 1, got {count}")
    require_same_shape(dm_clean, std)
    eps = rng.normals((count, dm_clean.height, dm_clean.width))
    reps = tuple(dm_clean.like(dm_clean.data + eps[i] * std.data) for i in range(count))
    return PerfusionSeries(reps=reps)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian taps truncated at 3 sigma, renormalized to unit sum."""
    radius = int(math.ceil(3.0 * sigma))
    if sigma <= 0 or radius == 0:
        return np.array([1.0])
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img: Image2D, fwhm_mm: float) -> Image2D:
    """Separable Gaussian blur with FWHM given in mm.

    sigma per axis is fwhm / (2*sqrt(2 ln 2) * voxel_size); borders are
    reflected so constants are preserved. fwhm = 0 is the identity.
    """
    if fwhm_mm < 0:
        raise InvalidParametersError(f"FWHM must be >= 0, got {fwhm_mm}")
    if fwhm_mm == 0:
        return img
    out = img.data
    for axis, vox_mm in enumerate(img.voxel_size):
        kernel = _gaussian_kernel(fwhm_mm / (FWHM_TO_SIGMA * vox_mm))
        if kernel.size > 1:
            out = convolve1d(out, kernel, axis=axis, mode="reflect")
    return img.like(out)


def make_subject(master_seed: int, subject_index: int, cfg: PhantomConfig,
                 params: AcquisitionParams) -> PhantomSubject:
    """Generate one subject: geometry, truth maps, and noisy repetitions.

    All randomness comes from streams derived from (master_seed, subject
    index, slice index, purpose), so subjects are independent and the
    result is a pure function of (master_seed, subject_index, cfg, params).
    """
    slices = []
    for sl in range(cfg.slices):
        geom_seed = derive(master_seed, "phantom", subject_index, sl, "geom").seed
        tissue = generate_geometry(geom_seed, cfg.width, cfg.height, cfg.voxel_size)
        cbf_truth = ground_truth_cbf(tissue)
        si_pd = synth_si_pd(tissue, cfg.pd_scale)
        scale = scale_map(params, si_pd, tissue.mask)
        dm_clean = invert_cbf(cbf_truth, scale)
        std = noise_std_map(si_pd, cfg.kappa)
        noise = derive(master_seed, "phantom", subject_index, sl, "noise")
        reps = sample_repetitions(dm_clean, std, cfg.repetitions, noise)
        slices.append(SubjectSlice(tissue=tissue, si_pd=si_pd, cbf_truth=cbf_truth,
                                   dm_clean=dm_clean, noise_std=std, repetitions=reps))
    subj_seed = derive(master_seed, "phantom", subject_index).seed
    return PhantomSubject(subject_id=f"subj{subject_index:02d}", seed=subj_seed,
                          slices=tuple(slices))


def subject_scale_maps(subject: PhantomSubject, params: AcquisitionParams) -> list[CbfScaleMap]:
    """Per-slice CBF scale maps recomputed from the stored SI_PD and mask."""
    return [scale_map(params, sl.si_pd, sl.tissue.mask) for sl in subject.slices]
