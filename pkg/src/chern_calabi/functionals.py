"""Energy functionals and the flow velocity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import geometry as geo
from .geometry import HermitianMetric, MetricError
from .lattice import Grid, integrate, interpolate, restrict


class BackgroundError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Background:
    """Reference metric with its Chern-Ricci potential.

    ``omega_density`` is the density of ``Omega = e^F omega0^n`` with respect
    to the euclidean measure (constant on the torus).
    """

    omega0: HermitianMetric
    F: np.ndarray
    V: float
    omega_density: np.ndarray

    @property
    def grid(self):
        return self.omega0.grid

    @cached_property
    def log_density(self) -> np.ndarray:
        return np.log(self.omega_density)

    @cached_property
    def dbar_log_density(self) -> np.ndarray:
        gr = self.grid
        lh = gr.fft(self.log_density)
        return np.stack([gr.ifft(lh * gr.symbol_antihol(k)) for k in range(gr.n)])

    @cached_property
    def spectrum0(self) -> np.ndarray:
        return self.omega0.spectrum


def ricci_potential(omega0: HermitianMetric) -> Background:
    """F = -log det g0 + c with c fixed by int e^F omega0^n = int omega0^n."""
    gr = omega0.grid
    logdet = np.log(omega0.det)
    c = np.log(np.mean(omega0.det))
    if not np.isfinite(c) or not np.all(np.isfinite(logdet)):
        raise BackgroundError("normalization integral is not finite")
    F = c - logdet
    V = integrate(np.ones(gr.shape), omega0)
    scale = math.factorial(gr.n) * 2 ** gr.n
    density = np.full(gr.shape, scale * np.exp(c))
    return Background(omega0, F, V, density)


def ddbar_logdet_refined(G: np.ndarray, grid: Grid, refine: int) -> np.ndarray:
    """``d_i d_jbar log det G`` by spectral differentiation on a finer grid.

    The band-limited components are interpolated ``refine`` times finer, the
    determinant and its logarithm are formed there and differentiated in
    Fourier space, and the result is sampled back at the original sites.  This
    path shares nothing with the chain-rule evaluation used elsewhere.
    """
    fine, Gf = interpolate(G, grid, refine)
    if grid.n == 1:
        det = Gf[0, 0].real
    else:
        det = (Gf[0, 0] * Gf[1, 1] - Gf[0, 1] * Gf[1, 0]).real
    return restrict(geo._spectral_ddbar(np.log(det), fine), grid, refine)


def background_residuals(bg: Background, refine: int = 2) -> dict[str, float]:
    """Residuals of the three defining properties of the background.

    ``i ddbar F`` is evaluated as ``-i ddbar log det g0`` on a grid ``refine``
    times finer (``F`` itself is not band-limited), then compared with the
    Chern-Ricci form built pointwise from the metric.
    """
    gr = bg.grid
    norm = integrate(np.exp(bg.F), bg.omega0)
    ddF = -ddbar_logdet_refined(bg.omega0.g, gr, refine)
    ric = geo._ricci(bg.omega0)
    dd_log_omega = geo._spectral_ddbar(bg.log_density, gr)
    return {
        "normalization": abs(norm - bg.V) / bg.V,
        "ricci_potential": float(np.abs(ric - ddF).max()),
        "log_omega_pluriharmonic": float(np.abs(dd_log_omega).max()),
    }


def perturbed_metric(bg: Background, phi: np.ndarray) -> HermitianMetric:
    """omega_phi = omega0 + i ddbar phi."""
    gr = bg.grid
    ph = gr.fft(phi)
    n = gr.n
    spec = bg.spectrum0.copy()
    for i in range(n):
        for j in range(n):
            spec[i, j] += ph * (gr.symbol_hol(i) * gr.symbol_antihol(j))
    G = gr.ifft(spec)
    try:
        g = geo.build_metric(G, gr, hermitian_tol=1e-10)
    except MetricError as exc:
        raise MetricError(f"omega_phi is not a metric: {exc}") from None
    g.__dict__["spectrum"] = spec
    return g


def volume(g: HermitianMetric) -> float:
    return integrate(np.ones(g.grid.shape), g)


def det_increment(bg: Background, phi: np.ndarray) -> np.ndarray:
    """``det g_phi - det g0`` formed from ``i ddbar phi`` alone.

    Subtracting two determinants of O(1) metrics leaves rounding of order
    ``eps * |g|`` in a difference that tends to zero along a converging flow.
    Expanding the determinant in the perturbation ``H = i ddbar phi`` keeps the
    rounding proportional to ``|H|`` instead.
    """
    gr = bg.grid
    ph = gr.fft(phi)
    n = gr.n
    H = [[gr.ifft(ph * (gr.symbol_hol(i) * gr.symbol_antihol(j))) for j in range(n)] for i in range(n)]
    if n == 1:
        return H[0][0].real
    G = bg.omega0.g
    a, b, c, d = G[0, 0], G[0, 1], G[1, 0], G[1, 1]
    ha, hb, hc, hd = H[0][0], H[0][1], H[1][0], H[1][1]
    return (a * hd + ha * d + ha * hd - b * hc - hb * c - hb * hc).real


def _log_ratio_and_det(bg: Background, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``log(det g_phi / det g0)``, ``det g_phi`` and ``det g_phi - det g0``."""
    det0 = bg.omega0.det
    inc = det_increment(bg, phi)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.log1p(inc / det0)
    if not np.all(np.isfinite(ratio)):
        raise MetricError("omega_phi is not a metric: non-positive determinant")
    return ratio, det0 + inc, inc


def _weighted_sum(f: np.ndarray, grid: Grid) -> float:
    weight = math.factorial(grid.n) * 2 ** grid.n * grid.h ** grid.ndim
    return float(np.sum(f)) * weight


def energies(bg: Background, phi: np.ndarray) -> tuple[float, float]:
    """Mabuchi energy and entropy of ``omega_phi``, sharing one determinant evaluation.

    Mab = (1/V) [int log(omega_phi^n/omega0^n) omega_phi^n - int F (omega_phi^n - omega0^n)].
    This equals the usual ``int (log ratio - F) omega_phi^n + int F omega0^n``
    but every term is small near convergence, so differences between nearby
    potentials are resolved well below the rounding level of the metric.
    """
    ratio, det, inc = _log_ratio_and_det(bg, phi)
    ent = _weighted_sum(ratio * det, bg.grid) / bg.V
    return ent - _weighted_sum(bg.F * inc, bg.grid) / bg.V, ent


def mabuchi(bg: Background, phi: np.ndarray, g: HermitianMetric | None = None) -> float:
    """Mabuchi energy (see :func:`energies`); ``g`` is accepted for call compatibility."""
    return energies(bg, phi)[0]


def entropy(bg: Background, phi: np.ndarray, g: HermitianMetric | None = None) -> float:
    """(1/V) int log(omega_phi^n / omega0^n) omega_phi^n."""
    return energies(bg, phi)[1]


def torsion_trace(g: HermitianMetric) -> np.ndarray:
    """(tr T)_j = g^{p qbar} d_p g_{j qbar} - d_j log det g."""
    return np.einsum("pq...,pjq...->j...", g.inv, g.dg) - g.d_logdet


def velocity_terms(bg: Background, g: HermitianMetric) -> tuple[np.ndarray, np.ndarray]:
    """Flow velocity and Chern scalar curvature of ``g``."""
    R = geo.chern_scalar(g)
    if g.n == 1:
        return R.copy(), R
    dbar_L = g.dbar_logdet - bg.dbar_log_density
    tr = torsion_trace(g)
    pair = np.einsum("jk...,j...,k...->...", g.inv, tr, dbar_L)
    return R + 2.0 * pair.real, R


def flow_velocity(bg: Background, phi: np.ndarray, g: HermitianMetric | None = None) -> np.ndarray:
    """R_phi + 2 Re(g_phi^{j kbar} (tr T_phi)_j d_kbar log(omega_phi^n / Omega))."""
    g = g if g is not None else perturbed_metric(bg, phi)
    return velocity_terms(bg, g)[0]


def coupled_residual(bg: Background, phi: np.ndarray, g: HermitianMetric | None = None,
                     refine: int = 2) -> float:
    """Sup-norm of Delta_phi F + R_phi - tr_phi Ric(omega0), F = log(omega_phi^n / omega0^n).

    ``ddbar F`` is taken on a grid ``refine`` times finer (see
    :func:`ddbar_logdet_refined`); curvature terms come from the pointwise
    chain rule.
    """
    g = g if g is not None else perturbed_metric(bg, phi)
    gr = bg.grid
    ddF = ddbar_logdet_refined(g.g, gr, refine) - ddbar_logdet_refined(bg.omega0.g, gr, refine)
    lap = geo.trace(g, ddF).real
    tr_ric0 = geo.trace(g, geo._ricci(bg.omega0)).real
    return float(np.abs(lap + geo.chern_scalar(g) - tr_ric0).max())
