"""Random tensor-permeability models with a percolating channel.

A model starts from a uniform impermeable background (the water level,
1e-6) and lays down a left-to-right random walk of overlapping oriented
rectangular pieces.  Each piece has its own diagonal magnitudes (and,
in finite-xy mode, its own off-diagonal fraction); pieces always make
forward x progress, so the walk spans the domain.  Walls are smoothed in
log space with a Gaussian of a few cells so that the expanded-form
finite-difference scheme sees resolved coefficient gradients; cells more
than a few smoothing lengths from any channel stay at the background
level.  Generation is deterministic in the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import GridShape, TensorField

BACKGROUND = 1.0e-6
PERCOLATION_THRESHOLD = 1.0e-3  # log-space midpoint between background and O(1) channels
RETRY_CAP = 100
PRNG_ID = "numpy.random.Generator(PCG64)"


class GenerationError(RuntimeError):
    """Raised when no percolating model is produced within the retry budget."""


@dataclass(frozen=True)
class ChannelSpec:
    """Geometry and magnitude ranges of the channel pieces.

    piece_len_range is in cells; None derives it from the grid as
    (0.6 n/10, n/10).  Widths are length/aspect, floored at 6 cells so
    every feature stays resolvable; the default aspect below 1 makes
    pieces wider than they are long, which keeps the channel
    representable after repeated 2x decimation.  wall_sigma is the
    log-space Gaussian smoothing width of the channel walls, in cells;
    the default is wide enough that the six-decade wall remains a
    resolved gradient even on a four-fold coarsened grid.
    """

    piece_len_range: tuple[float, float] | None = None
    aspect_range: tuple[float, float] = (0.4, 0.6)
    incline_range: tuple[float, float] = (-np.pi / 3, np.pi / 3)
    magnitude_range: tuple[float, float] = (0.1, 2.0)
    xy_mode: str = "zero"
    xy_fraction_range: tuple[float, float] = (-0.5, 0.5)
    wall_sigma: float = 10.0

    def __post_init__(self):
        if self.xy_mode not in ("zero", "finite"):
            raise ValueError(f"xy_mode must be 'zero' or 'finite', got {self.xy_mode!r}")
        lo, hi = self.magnitude_range
        if not (BACKGROUND < lo <= hi <= 2.0):
            raise ValueError(f"magnitude_range must lie in ({BACKGROUND}, 2], got {self.magnitude_range}")
        lo, hi = self.aspect_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"aspect_range must satisfy 0 < min <= max, got {self.aspect_range}")
        lo, hi = self.incline_range
        if not (-np.pi / 2 < lo <= hi < np.pi / 2):
            raise ValueError("incline_range must lie strictly inside (-pi/2, pi/2) "
                             "so pieces make forward x progress")
        lo, hi = self.xy_fraction_range
        if not (-0.9 < lo <= hi < 0.9):
            raise ValueError(f"xy_fraction_range must lie in (-0.9, 0.9), got {self.xy_fraction_range}")
        if self.piece_len_range is not None:
            lo, hi = self.piece_len_range
            if not (0 < lo <= hi):
                raise ValueError(f"bad piece_len_range {self.piece_len_range}")
        if self.wall_sigma < 0:
            raise ValueError("wall_sigma must be non-negative")

    def resolved_len_range(self, n: int) -> tuple[float, float]:
        cap = n / 10.0
        if self.piece_len_range is None:
            return (0.6 * cap, cap)
        lo, hi = self.piece_len_range
        if hi > cap:
            raise ValueError(f"piece length max {hi} exceeds n/10 = {cap}")
        return (float(lo), float(hi))


@dataclass(frozen=True)
class ModelParams:
    shape: GridShape
    seed: int
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    background: float = BACKGROUND

    def __post_init__(self):
        if self.shape.n < 64:
            raise ValueError("model generation requires n >= 64 "
                             "(a 6-cell-wide feature must fit under the n/10 piece cap)")
        if self.background != BACKGROUND:
            raise ValueError(f"background is fixed at the water level {BACKGROUND}")


def _raster_walk(params: ModelParams, rng: np.random.Generator):
    """Lay one channel walk; returns sharp (axx, ayy, rho) cell arrays."""
    n = params.shape.n
    spec = params.channel
    lmin, lmax = spec.resolved_len_range(n)
    axx = np.full((n, n), params.background)
    ayy = np.full((n, n), params.background)
    rho = np.zeros((n, n))
    jj, ii = np.mgrid[0:n, 0:n]
    x, y = -1.0, rng.uniform(0.25 * n, 0.75 * n)
    while x < n:
        length = rng.uniform(lmin, lmax)
        aspect = rng.uniform(*spec.aspect_range)
        width = max(6.0, length / aspect)
        theta = rng.uniform(*spec.incline_range)
        # reflect the inclination away from the y walls
        if y + length * np.sin(theta) < 0.15 * n:
            theta = abs(theta)
        elif y + length * np.sin(theta) > 0.85 * n:
            theta = -abs(theta)
        ux, uy = np.cos(theta), np.sin(theta)
        t = (ii - x) * ux + (jj - y) * uy
        s = -(ii - x) * uy + (jj - y) * ux
        mask = (t >= -width / 2) & (t <= length + width / 2) & (np.abs(s) <= width / 2)
        axx[mask] = rng.uniform(*spec.magnitude_range)
        ayy[mask] = rng.uniform(*spec.magnitude_range)
        if spec.xy_mode == "finite":
            rho[mask] = rng.uniform(*spec.xy_fraction_range)
        x += length * ux
        y += length * uy
    return axx, ayy, rho


def generate_model(params: ModelParams) -> TensorField:
    """Generate a percolating model; deterministic in params.seed."""
    rng = np.random.default_rng(params.seed)
    sigma = params.channel.wall_sigma
    for attempt in range(1, RETRY_CAP + 1):
        axx, ayy, rho = _raster_walk(params, rng)
        if sigma > 0:
            axx = 10.0 ** ndimage.gaussian_filter(np.log10(axx), sigma)
            ayy = 10.0 ** ndimage.gaussian_filter(np.log10(ayy), sigma)
            rho = ndimage.gaussian_filter(rho, sigma)
        axy = rho * np.sqrt(axx * ayy)
        fld = TensorField(params.shape, axx, axy, ayy)
        if percolation_check(fld, PERCOLATION_THRESHOLD):
            return fld
    raise GenerationError(
        f"no percolating channel after {RETRY_CAP} attempts (seed {params.seed})")


def percolation_check(fld: TensorField, threshold: float) -> bool:
    """True iff a 4-connected path with a_xx > threshold spans column 0 to n-1."""
    if threshold <= BACKGROUND:
        raise ValueError(f"threshold must exceed the background {BACKGROUND}")
    mask = fld.a_xx > threshold
    labels, _ = ndimage.label(mask)  # default structure: 4-connectivity
    left = set(labels[:, 0][mask[:, 0]])
    right = set(labels[:, -1][mask[:, -1]])
    return bool(left & right)
