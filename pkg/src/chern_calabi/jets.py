"""Fused evaluation of the n = 2 flow velocity.

The time stepper needs the velocity of ``omega0 + i ddbar phi`` once per step.
The general tensor code in :mod:`~chern_calabi.geometry` builds every
Christoffel symbol and curvature component; here only the 18 transforms that
the velocity actually depends on are taken (in one batch) and the algebra is
done site by site in a compiled kernel through ``det g``:

* ``Ric_{k lbar} = -d_k d_lbar log det g`` with the derivatives of ``det g``
  expanded by the product rule, so it is exact for band-limited components;
* ``(tr T)_j = g^{p qbar} d_p g_{j qbar} - d_j log det g``;
* ``v = R + 2 Re(g^{j kbar} (tr T)_j d_kbar log det g)``.

The last line assumes the constant volume density produced by
:func:`~chern_calabi.functionals.ricci_potential`, so ``d log Omega = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .geometry import MetricError
from .lattice import Grid

# Entry ``i`` of the batch is ``base[src] * symbol`` where
# ``base = (a, d, b, a + i d)`` are the spectra of a = g_{1 1bar}, d = g_{2 2bar}
# and b = g_{1 2bar}, and the symbol applies the listed holomorphic and
# antiholomorphic derivatives.  Real fields are packed two per transform.
LAYOUT = (
    (3, "", ""),                   # 0: a + i d
    (2, "", ""),                   # 1: b
    (0, "0", ""), (0, "1", ""),    # 2-3: d_k a
    (1, "0", ""), (1, "1", ""),    # 4-5: d_k d
    (2, "0", ""), (2, "1", ""),    # 6-7: d_k b
    (2, "", "0"), (2, "", "1"),    # 8-9: d_kbar b
    (3, "0", "0"), (3, "1", "1"),  # 10-11: d_k d_kbar (a + i d)
    (0, "0", "1"), (1, "0", "1"),  # 12-13: d_1 d_2bar a, d_1 d_2bar d
    (2, "0", "0"), (2, "0", "1"), (2, "1", "0"), (2, "1", "1"),  # 14-17: d_k d_lbar b
)
_SOURCE = np.array([src for src, _, _ in LAYOUT])
_CONSTANTS: dict = {}


def _constants(grid: Grid):
    key = (grid.N, grid.L)
    if key not in _CONSTANTS:
        sym = np.empty((len(LAYOUT), grid.size), dtype=complex)
        for i, (_, hol, anti) in enumerate(LAYOUT):
            s = np.ones(grid.shape, dtype=complex)
            for k in hol:
                s = s * grid.symbol_hol(int(k))
            for k in anti:
                s = s * grid.symbol_antihol(int(k))
            sym[i] = s.ravel()
        D, Db = grid.symbol_hol, grid.symbol_antihol
        ddbar = np.stack([np.broadcast_to(D(i) * Db(j), grid.shape).ravel()
                          for i, j in ((0, 0), (1, 1), (0, 1))])
        _CONSTANTS[key] = (sym, ddbar)
    return _CONSTANTS[key]


@numba.njit(cache=True)
def _batch(s0, ph, ddbar, sym, src, out):  # pragma: no cover - compiled
    """out[i] = base[src[i]] * sym[i], base = (a, d, b, a + i d) spectra of omega_phi."""
    m = ph.shape[0]
    base = np.empty((4, m), dtype=np.complex128)
    for s in range(m):
        p = ph[s]
        sa = s0[0, s] + p * ddbar[0, s]
        sd = s0[1, s] + p * ddbar[1, s]
        base[0, s] = sa
        base[1, s] = sd
        base[2, s] = s0[2, s] + p * ddbar[2, s]
        base[3, s] = sa + 1j * sd
    for i in range(src.shape[0]):
        row = base[src[i]]
        for s in range(m):
            out[i, s] = row[s] * sym[i, s]


@numba.njit(cache=True)
def _kernel(F, v, R, det, lo):  # pragma: no cover - compiled
    for s in range(F.shape[1]):
        a = F[0, s].real
        d = F[0, s].imag
        b = F[1, s]
        c = b.conjugate()
        da0, da1 = F[2, s], F[3, s]
        dd0, dd1 = F[4, s], F[5, s]
        db0, db1 = F[6, s], F[7, s]
        dbb0, dbb1 = F[8, s], F[9, s]
        dc0, dc1 = dbb0.conjugate(), dbb1.conjugate()  # d_k conj(b)
        b00, b01, b10, b11 = F[14, s], F[15, s], F[16, s], F[17, s]
        bb = b.real * b.real + b.imag * b.imag
        D = a * d - bb
        det[s] = D
        lo[s] = 0.5 * (a + d) - np.sqrt((0.5 * (a - d)) ** 2 + bb)
        iD = 1.0 / D
        dD0 = da0 * d + a * dd0 - db0 * c - b * dc0
        dD1 = da1 * d + a * dd1 - db1 * c - b * dc1
        # d_k d_lbar det g for (k, l) = (0, 0), (1, 1), (0, 1); (1, 0) is the conjugate of (0, 1)
        ddD00 = (F[10, s].real * d + 2.0 * (da0 * dd0.conjugate()).real + a * F[10, s].imag
                 - 2.0 * (b00 * c).real - db0 * db0.conjugate() - dbb0 * dc0).real
        ddD11 = (F[11, s].real * d + 2.0 * (da1 * dd1.conjugate()).real + a * F[11, s].imag
                 - 2.0 * (b11 * c).real - db1 * db1.conjugate() - dbb1 * dc1).real
        ddD01 = (F[12, s] * d + da0 * dd1.conjugate() + da1.conjugate() * dd0 + a * F[13, s]
                 - b01 * c - db0 * db1.conjugate() - dbb1 * dc0 - b * b10.conjugate())
        ric00 = ((dD0 * dD0.conjugate()).real * iD - ddD00) * iD
        ric11 = ((dD1 * dD1.conjugate()).real * iD - ddD11) * iD
        ric01 = (dD0 * dD1.conjugate() * iD - ddD01) * iD
        # inv[k][p] = g^{k pbar}
        inv00 = d * iD
        inv11 = a * iD
        inv01 = -c * iD
        inv10 = -b * iD
        r = inv00 * ric00 + inv11 * ric11 + 2.0 * (inv01 * ric01).real
        tr0 = inv00 * da0 + inv01 * db0 + inv10 * da1 + inv11 * db1 - dD0 * iD
        tr1 = inv00 * dc0 + inv01 * dd0 + inv10 * dc1 + inv11 * dd1 - dD1 * iD
        cD0 = dD0.conjugate()
        cD1 = dD1.conjugate()
        pair = tr0 * (inv00 * cD0 + inv01 * cD1) + tr1 * (inv10 * cD0 + inv11 * cD1)
        R[s] = r
        v[s] = r + 2.0 * pair.real * iD


@dataclass(frozen=True, eq=False)
class Jets:
    """Pointwise geometry of the n = 2 metric ``omega0 + i ddbar phi``.

    ``fields`` is the batched transform laid out by :data:`LAYOUT`.  ``v`` is
    the flow velocity, ``R`` the Chern scalar curvature.  ``grid``, ``det``
    and ``min_eigen`` make a ``Jets`` usable wherever only the volume form is
    needed, e.g. in :func:`~chern_calabi.lattice.integrate`.
    """

    grid: Grid
    spectrum0: np.ndarray
    phi_hat: np.ndarray
    fields: np.ndarray
    det: np.ndarray
    min_eigen: float
    v: np.ndarray
    R: np.ndarray

    @property
    def n(self) -> int:
        return 2

    @cached_property
    def spectrum(self) -> np.ndarray:
        """Fourier coefficients of the metric components."""
        gr = self.grid
        spec = self.spectrum0.copy()
        for i in range(2):
            for j in range(2):
                spec[i, j] += self.phi_hat * (gr.symbol_hol(i) * gr.symbol_antihol(j))
        return spec


def metric_jets(spectrum0: np.ndarray, phi_hat: np.ndarray, grid: Grid) -> Jets:
    """Jets of ``omega0 + i ddbar phi`` from the spectra of g0 and phi (n = 2)."""
    if grid.n != 2:
        raise ValueError("metric jets are implemented for n = 2")
    sym, ddbar = _constants(grid)
    s0 = np.stack([spectrum0[0, 0].ravel(), spectrum0[1, 1].ravel(), spectrum0[0, 1].ravel()])
    batch = np.empty((len(LAYOUT), grid.size), dtype=complex)
    _batch(s0, np.ascontiguousarray(phi_hat).ravel(), ddbar, sym, _SOURCE, batch)
    fields = grid.ifft(batch.reshape((len(LAYOUT),) + grid.shape))
    v, R, det, lo = (np.empty(grid.size) for _ in range(4))
    _kernel(fields.reshape(len(LAYOUT), -1), v, R, det, lo)
    min_eig = float(lo.min())
    if not min_eig > 0:
        site = tuple(int(i) for i in np.unravel_index(int(np.argmin(lo)), grid.shape))
        raise MetricError(f"omega_phi is not a metric: eigenvalue {min_eig:.6g} at site {site}")
    shape = grid.shape
    return Jets(grid, spectrum0, phi_hat, fields, det.reshape(shape), min_eig,
                v.reshape(shape), R.reshape(shape))


def volume_density(spectrum0: np.ndarray, phi_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """``det g`` of ``omega0 + i ddbar phi`` from two transforms (n = 2)."""
    D, Db = grid.symbol_hol, grid.symbol_antihol
    sa = spectrum0[0, 0] + phi_hat * (D(0) * Db(0))
    sd = spectrum0[1, 1] + phi_hat * (D(1) * Db(1))
    sb = spectrum0[0, 1] + phi_hat * (D(0) * Db(1))
    ad, b = grid.ifft(np.stack([sa + 1j * sd, sb]))
    det = ad.real * ad.imag - (b.real ** 2 + b.imag ** 2)
    if not det.min() > 0:
        raise MetricError(f"omega_phi is not a metric: det g = {det.min():.6g}")
    return det
