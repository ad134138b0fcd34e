"""Deterministic test metrics on the torus."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import HermitianMetric, MetricError, build_metric, eigen_bounds, _spectral_ddbar
from .lattice import Grid, random_bandlimited, random_complex_bandlimited

KINDS = ("flat", "conformal", "kahler", "random_pluriclosed", "constant_det_fixture")


@dataclass(frozen=True)
class MetricRecipe:
    """Serializable description of a starting metric.

    ``amplitude`` is the sup-norm of the perturbation of the metric components
    (for ``conformal`` it is the sup-norm of the conformal factor exponent ``u``,
    for ``constant_det_fixture`` it is the off-diagonal size epsilon).  ``mode``
    selects a single Fourier mode where a kind supports it (``conformal`` uses
    ``u = amplitude * sin(2 pi mode x / L)`` when ``mode > 0``).
    """

    kind: str = "flat"
    seed: int = 0
    amplitude: float = 0.0
    max_mode: int = 1
    mode: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}; expected one of {KINDS}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")

    def fingerprint(self) -> str:
        return ",".join(f"{k}={v}" for k, v in asdict(self).items())


def flat_metric(grid: Grid) -> HermitianMetric:
    eye = np.eye(grid.n, dtype=complex).reshape((grid.n, grid.n) + (1,) * grid.ndim)
    return build_metric(np.broadcast_to(eye, (grid.n, grid.n) + grid.shape).copy(), grid)


def conformal_metric(grid: Grid, u: np.ndarray) -> HermitianMetric:
    if grid.n != 1:
        raise MetricError("conformal metrics are only provided for n = 1")
    if np.iscomplexobj(u) and np.abs(u.imag).max() > 1e-12:
        raise MetricError("conformal factor must be real")
    return build_metric(np.exp(np.real(u))[None, None].astype(complex), grid)


def kahler_perturbation(omega0: HermitianMetric, psi: np.ndarray) -> HermitianMetric:
    """omega0 + i ddbar psi, with a positivity check that reports the admissible scaling."""
    grid = omega0.grid
    dd = _spectral_ddbar(psi, grid)
    G = omega0.g + dd
    try:
        return build_metric(G, grid)
    except MetricError as exc:
        raise MetricError(f"{exc}; admissible scaling of psi < {_max_scaling(omega0, dd):.6g}") from None


def _max_scaling(omega0: HermitianMetric, dd: np.ndarray) -> float:
    lo, _ = eigen_bounds(omega0)
    pert = np.abs(dd).sum(axis=(0, 1)).max()
    return float(lo.min() / pert) if pert > 0 else np.inf


def project_pluriclosed(H: np.ndarray, grid: Grid) -> np.ndarray:
    """Orthogonal projection of a Hermitian perturbation onto ddbar(omega) = 0 (n = 2).

    The constraint is linear with constant coefficients, so it is removed one
    Fourier mode at a time: with ``w`` the constraint row acting on
    ``(h11, h22, h12, h21)`` the coefficient vector ``x`` becomes
    ``x - conj(w) (w . x) / |w|^2``.  Hermitian symmetry is preserved.
    """
    if grid.n != 2:
        raise MetricError("pluriclosed projection is only meaningful for n = 2")
    s = grid.fft(H)
    D, Db = grid.symbol_hol, grid.symbol_antihol
    w = [D(1) * Db(1), D(0) * Db(0), -D(1) * Db(0), -D(0) * Db(1)]
    w = [np.broadcast_to(c, grid.shape) for c in w]
    x = [s[0, 0], s[1, 1], s[0, 1], s[1, 0]]
    wx = sum(wi * xi for wi, xi in zip(w, x))
    norm = sum(np.abs(wi) ** 2 for wi in w)
    coef = np.divide(wx, norm, out=np.zeros_like(wx), where=norm > 0)
    out = np.empty_like(s)
    out[0, 0] = x[0] - np.conj(w[0]) * coef
    out[1, 1] = x[1] - np.conj(w[1]) * coef
    out[0, 1] = x[2] - np.conj(w[2]) * coef
    out[1, 0] = x[3] - np.conj(w[3]) * coef
    res = grid.ifft(out)
    # restore exact Hermitian symmetry lost to rounding
    res = 0.5 * (res + np.conj(np.swapaxes(res, 0, 1)))
    return res


def random_pluriclosed(grid: Grid, seed: int, amplitude: float, max_mode: int) -> HermitianMetric:
    """Flat metric plus a random band-limited pluriclosed Hermitian perturbation."""
    if grid.n != 2:
        raise MetricError("random_pluriclosed needs n = 2")
    if amplitude == 0:
        return flat_metric(grid)
    ss = np.random.SeedSequence(seed).spawn(3)
    seeds = [int(s.generate_state(1)[0]) for s in ss]
    H = np.zeros((2, 2) + grid.shape, dtype=complex)
    H[0, 0] = random_bandlimited(seeds[0], 1.0, max_mode, grid)
    H[1, 1] = random_bandlimited(seeds[1], 1.0, max_mode, grid)
    H[0, 1] = random_complex_bandlimited(seeds[2], 1.0, max_mode, grid)
    H[1, 0] = np.conj(H[0, 1])
    H = project_pluriclosed(H, grid)
    H *= amplitude / np.abs(H).max()
    G = np.eye(2).reshape(2, 2, 1, 1, 1, 1) + H
    try:
        return build_metric(G, grid)
    except MetricError as exc:
        raise MetricError(f"random pluriclosed metric lost positivity: {exc}") from None


def constant_det_fixture(grid: Grid, eps: float, mode: int = 1) -> HermitianMetric:
    """g11 = g22 = 1, g12 = eps exp(2 pi i mode x^1 / L): det = 1 - eps^2, non-Kahler."""
    if grid.n != 2:
        raise MetricError("constant_det_fixture needs n = 2")
    if not 0 <= eps < 1:
        raise MetricError(f"eps must lie in [0, 1), got {eps}")
    x1 = grid.coordinates()[0]
    G = np.zeros((2, 2) + grid.shape, dtype=complex)
    G[0, 0] = 1.0
    G[1, 1] = 1.0
    G[0, 1] = eps * np.exp(2j * np.pi * mode * x1 / grid.L)
    G[1, 0] = np.conj(G[0, 1])
    return build_metric(G, grid)


def kahler_potential(grid: Grid, seed: int, amplitude: float, max_mode: int) -> np.ndarray:
    """Random potential scaled so that the components of ddbar psi have sup-norm ``amplitude``."""
    psi = random_bandlimited(seed, 1.0, max_mode, grid)
    scale = np.abs(_spectral_ddbar(psi, grid)).max()
    if amplitude == 0 or scale == 0:
        return np.zeros(grid.shape)
    return psi * (amplitude / scale)


def metric_from_recipe(recipe: MetricRecipe, grid: Grid) -> HermitianMetric:
    kind = recipe.kind
    if kind == "flat":
        return flat_metric(grid)
    if kind == "conformal":
        if recipe.mode > 0:
            u = recipe.amplitude * np.sin(2 * np.pi * recipe.mode * grid.coordinates()[0] / grid.L)
        else:
            u = random_bandlimited(recipe.seed, recipe.amplitude, recipe.max_mode, grid)
        return conformal_metric(grid, u)
    if kind == "kahler":
        psi = kahler_potential(grid, recipe.seed, recipe.amplitude, recipe.max_mode)
        return kahler_perturbation(flat_metric(grid), psi)
    if kind == "random_pluriclosed":
        return random_pluriclosed(grid, recipe.seed, recipe.amplitude, recipe.max_mode)
    return constant_det_fixture(grid, recipe.amplitude, recipe.mode or 1)
