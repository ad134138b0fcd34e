"""Periodic lattice over the flat complex torus.

Scalar fields are plain numpy arrays of shape ``grid.shape``; complex
coordinate ``z^k = x^k + i y^k`` (k = 0, ..., n-1) occupies real axes
``2k`` (x) and ``2k + 1`` (y).  Tensor-valued arrays carry their component
axes in front, so every operator here acts on the trailing ``2n`` axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

try:  # FFTW is several times faster than pocketfft on the small 4-d grids used here
    import pyfftw
    import pyfftw.interfaces.scipy_fft as sfft

    # ESTIMATE plans are chosen without timing, so transforms are reproducible
    # from one process to the next (needed for bit-exact checkpoint resume).
    pyfftw.config.PLANNER_EFFORT = "FFTW_ESTIMATE"
    pyfftw.config.NUM_THREADS = 1
    pyfftw.interfaces.cache.enable()
    pyfftw.interfaces.cache.set_keepalive_time(300)
    FFT_BACKEND = "pyfftw"
except ImportError:  # pragma: no cover - exercised only without pyfftw
    import scipy.fft as sfft

    FFT_BACKEND = "scipy"


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    n: int
    points_per_axis: int
    period: float = 1.0


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic grid with precomputed spectral multipliers."""

    n: int
    N: int
    L: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise GridError(f"complex dimension must be 1 or 2, got {self.n}")
        if self.N < 8 or self.N % 2:
            raise GridError(f"N must be even >= 8, got {self.N}")
        if not self.L > 0:
            raise GridError(f"period must be positive, got {self.L}")

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.n, self.N, self.L) == (other.n, other.N, other.L)

    def __hash__(self):
        return hash((self.n, self.N, self.L))

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.ndim

    @property
    def size(self) -> int:
        return self.N ** self.ndim

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.ndim, 0))

    @cached_property
    def modes(self) -> np.ndarray:
        """Integer mode numbers in FFT order, -N/2 .. N/2-1."""
        return np.fft.fftfreq(self.N, d=1.0 / self.N).round().astype(int)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """2 pi m / L per axis; Nyquist entry set to zero for odd derivatives."""
        k = 2 * np.pi * self.modes / self.L
        k[self.N // 2] = 0.0
        return k

    def _axis_array(self, v: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * self.ndim
        shape[axis] = self.N
        return v.reshape(shape)

    @cached_property
    def _d_hol(self) -> tuple[np.ndarray, ...]:
        # d/dz = (d/dx - i d/dy)/2  ->  (i kx + ky)/2
        return tuple(
            0.5 * (1j * self._axis_array(self.wavenumbers, 2 * k)
                   + self._axis_array(self.wavenumbers, 2 * k + 1))
            for k in range(self.n)
        )

    @cached_property
    def _d_antihol(self) -> tuple[np.ndarray, ...]:
        # d/dzbar = (d/dx + i d/dy)/2  ->  (i kx - ky)/2
        return tuple(
            0.5 * (1j * self._axis_array(self.wavenumbers, 2 * k)
                   - self._axis_array(self.wavenumbers, 2 * k + 1))
            for k in range(self.n)
        )

    def symbol_hol(self, k: int) -> np.ndarray:
        """Fourier multiplier of d/dz^k (broadcastable to ``shape``)."""
        self._check_axis(k)
        return self._d_hol[k]

    def symbol_antihol(self, k: int) -> np.ndarray:
        self._check_axis(k)
        return self._d_antihol[k]

    @cached_property
    def flat_laplacian_symbol(self) -> np.ndarray:
        """Symbol of sum_k d_k d_kbar, i.e. a quarter of the euclidean Laplacian."""
        k2 = 2 * np.pi * self.modes / self.L
        out = np.zeros(self.shape)
        for ax in range(self.ndim):
            out = out - 0.25 * self._axis_array(k2 ** 2, ax)
        return out

    @cached_property
    def bilaplacian_symbol(self) -> np.ndarray:
        """Square of :attr:`flat_laplacian_symbol`."""
        return self.flat_laplacian_symbol ** 2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.N // 3
        keep = np.abs(self.modes) <= cut
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.ndim):
            mask = mask & self._axis_array(keep, ax)
        return mask

    def band_mask(self, max_mode: int) -> np.ndarray:
        keep = np.abs(self.modes) <= max_mode
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.ndim):
            mask = mask & self._axis_array(keep, ax)
        return mask

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Real coordinates (x^1, y^1, ..., x^n, y^n), each broadcast to ``shape``."""
        x = np.arange(self.N) * self.h
        return tuple(np.meshgrid(*([x] * self.ndim), indexing="ij"))

    def _check_axis(self, k: int):
        if not 0 <= k < self.n:
            raise GridError(f"complex axis {k} out of range for n={self.n}")

    # transforms over the trailing axes
    def fft(self, f: np.ndarray) -> np.ndarray:
        return sfft.fftn(f, axes=self.axes)

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.ifftn(fh, axes=self.axes)


def make_grid(spec: GridSpec) -> Grid:
    return Grid(spec.n, spec.points_per_axis, spec.period)


def _real_if_real(f: np.ndarray, out: np.ndarray) -> np.ndarray:
    if np.isrealobj(f):
        return out.real
    return out


def d_hol(f: np.ndarray, k: int, grid: Grid) -> np.ndarray:
    """Spectral d/dz^k. Exact for fields with all modes below Nyquist."""
    return grid.ifft(grid.fft(f) * grid.symbol_hol(k))


def d_antihol(f: np.ndarray, k: int, grid: Grid) -> np.ndarray:
    return grid.ifft(grid.fft(f) * grid.symbol_antihol(k))


def integrate(f: np.ndarray, g, grid: Grid | None = None) -> complex | float:
    """Integral of ``f`` against the volume form of ``g``.

    ``g`` is a :class:`~chern_calabi.geometry.HermitianMetric` (or ``None`` for
    the flat metric, in which case ``grid`` is required).  The volume form is
    ``n! 2^n det(g)`` times the euclidean measure.
    """
    if g is None:
        if grid is None:
            raise GridError("flat integration needs a grid")
        det = 1.0
    else:
        if grid is not None and grid != g.grid:
            raise GridError("field and metric live on different grids")
        grid = g.grid
        det = g.det
    f = np.asarray(f)
    if f.shape != grid.shape:
        raise GridError(f"field shape {f.shape} does not match grid {grid.shape}")
    weight = math.factorial(grid.n) * 2 ** grid.n * grid.h ** grid.ndim
    total = np.sum(f * det)
    if np.isrealobj(total):
        return float(total * weight)
    return complex(total * weight)


_FD1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def fd_oracle(f: np.ndarray, axis: int, order: int, grid: Grid) -> np.ndarray:
    """Centered fourth-order finite difference along one real axis."""
    if not 0 <= axis < grid.ndim:
        raise GridError(f"real axis {axis} out of range")
    if order not in (1, 2):
        raise GridError("order must be 1 or 2")
    ax = axis - grid.ndim
    stencil = _FD1 if order == 1 else _FD2
    out = np.zeros_like(f)
    for offset, c in zip(range(-2, 3), stencil):
        if c:
            # roll by -offset brings f(x + offset h) to x
            out = out + c * np.roll(f, -offset, axis=ax)
    return out / grid.h ** order


def dealias(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero every Fourier mode with some axis index above N // 3."""
    out = grid.ifft(grid.fft(f) * grid.dealias_mask)
    return _real_if_real(f, out)


def spectrum_support(f: np.ndarray, grid: Grid, tol: float = 1e-12) -> int:
    """Largest per-axis |mode| carrying a coefficient above ``tol`` (relative)."""
    fh = np.abs(grid.fft(f)) / grid.size
    if fh.max() == 0:
        return 0
    big = fh > tol * max(fh.max(), 1.0)
    idx = np.nonzero(big)
    return int(max(np.abs(grid.modes[i]).max() for i in idx))


def interpolate(f: np.ndarray, grid: Grid, factor: int) -> tuple[Grid, np.ndarray]:
    """Trigonometric interpolation onto a grid ``factor`` times finer per axis.

    Leading (component) axes are carried along.  The Nyquist coefficient is
    dropped, so the result is exact for fields with all modes below N/2.
    """
    if factor < 1:
        raise GridError("refinement factor must be a positive integer")
    fine = Grid(grid.n, grid.N * factor, grid.L)
    d = grid.ndim
    keep = np.abs(grid.modes) < grid.N // 2
    idx = np.mod(grid.modes[keep], fine.N)
    s = grid.fft(f)
    lead = s.ndim - d
    for ax in range(d):
        s = np.compress(keep, s, axis=lead + ax)
    out = np.zeros(s.shape[:lead] + fine.shape, dtype=complex)
    out[(Ellipsis,) + np.ix_(*([idx] * d))] = s * factor ** d
    return fine, _real_if_real(f, fine.ifft(out))


def restrict(f: np.ndarray, grid: Grid, factor: int) -> np.ndarray:
    """Sample a field on the ``factor``-times finer grid at the sites of ``grid``."""
    return f[(Ellipsis,) + (slice(None, None, factor),) * grid.ndim]


def random_bandlimited(seed: int, amplitude: float, max_mode: int, grid: Grid) -> np.ndarray:
    """Real zero-mean random field with modes <= ``max_mode`` and sup-norm ``amplitude``.

    Coefficients are standard normals drawn in C order over the full FFT grid
    from ``numpy.random.default_rng(seed)`` (PCG64), weighted by
    ``(1 + |m|^2)^(-1/2)`` so the variance decays like mode^-2.
    """
    if max_mode > grid.N // 3:
        raise GridError(f"max_mode {max_mode} exceeds N/3 = {grid.N // 3}")
    if max_mode < 0:
        raise GridError("max_mode must be non-negative")
    if amplitude == 0 or max_mode == 0:
        return np.zeros(grid.shape)
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    m2 = np.zeros(grid.shape)
    for ax in range(grid.ndim):
        m2 = m2 + grid._axis_array(grid.modes.astype(float) ** 2, ax)
    coeffs = coeffs / np.sqrt(1.0 + m2)
    coeffs = coeffs * grid.band_mask(max_mode)
    coeffs.flat[0] = 0.0
    f = grid.ifft(coeffs).real
    return f * (amplitude / np.abs(f).max())


def random_complex_bandlimited(seed: int, amplitude: float, max_mode: int, grid: Grid) -> np.ndarray:
    """Complex field ``u + i v`` from two independent real draws."""
    ss = np.random.SeedSequence(seed).spawn(2)
    re = random_bandlimited(int(ss[0].generate_state(1)[0]), amplitude, max_mode, grid)
    im = random_bandlimited(int(ss[1].generate_state(1)[0]), amplitude, max_mode, grid)
    return re + 1j * im
