"""Time integration of the Chern-Calabi flow for the potential phi."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import geometry as geo
from .functionals import (Background, energies, perturbed_metric, ricci_potential,
                          velocity_terms, volume)
from .jets import Jets, metric_jets, volume_density
from .geometry import MetricError
from .lattice import Grid, integrate
from .metricgen import MetricRecipe, metric_from_recipe

INTEGRATORS = ("rk4", "imex")

# RK4 stability constant: dt <= c_cfl * h^4 with c_cfl = RK4_CFL / (2n)^2.  The
# flat bi-Laplacian at the dealiasing cutoff N/3 on 2n axes has symbol
# pi^4 (2n)^2 / (81 h^4); 2.78 is the RK4 stability interval, 2.2 leaves room for
# metrics with min eigenvalue slightly below one.
RK4_CFL = 2.2 * 81 / math.pi ** 4


class FlowAbort(RuntimeError):
    """Degenerate metric or non-finite values; carries the last good state."""

    def __init__(self, reason: str, message: str, state: "FlowState"):
        super().__init__(message)
        self.reason = reason
        self.state = state


@dataclass(frozen=True)
class FlowConfig:
    integrator: str = "imex"
    dt: float = 1e-4
    t_max: float = 1.0
    max_steps: int = 10_000
    scalar_curv_tol: float = 1e-6
    min_eigen_guard: float = 1e-3
    stabilization: float = 0.0
    record_every: int = 1

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")

    def check_grid(self, grid: Grid):
        if self.integrator == "rk4":
            limit = rk4_dt_limit(grid)
            if self.dt > limit:
                raise ValueError(f"rk4 dt={self.dt:.3e} exceeds stability limit {limit:.3e}")


def rk4_dt_limit(grid: Grid) -> float:
    return RK4_CFL / grid.ndim ** 2 * grid.h ** 4


@dataclass(frozen=True, eq=False)
class FlowState:
    """Potential ``phi`` at time ``t`` over the background ``bg``.

    Geometric data of ``omega_phi`` are built lazily and cached: ``metric``
    is the full :class:`~chern_calabi.geometry.HermitianMetric`, ``jets`` the
    lighter n = 2 representation used by the time stepper.
    """

    t: float
    phi: np.ndarray
    bg: Background
    step_index: int = 0
    renorm_correction: float = 0.0

    @cached_property
    def metric(self) -> geo.HermitianMetric:
        return perturbed_metric(self.bg, self.phi)

    @cached_property
    def phi_hat(self) -> np.ndarray:
        return self.bg.grid.fft(self.phi)

    @cached_property
    def jets(self) -> Jets:
        return metric_jets(self.bg.spectrum0, self.phi_hat, self.bg.grid)

    @property
    def view(self):
        """Object exposing ``grid``, ``det`` and ``min_eigen`` of omega_phi."""
        return self.jets if self.bg.grid.n == 2 else self.metric

    @cached_property
    def velocity(self) -> tuple[np.ndarray, np.ndarray]:
        """(flow velocity, Chern scalar curvature) of omega_phi."""
        if self.bg.grid.n == 2:
            return self.jets.v, self.jets.R
        return velocity_terms(self.bg, self.metric)

    @cached_property
    def det(self) -> np.ndarray:
        """det of omega_phi from the two transforms it needs (n = 2) or the metric (n = 1)."""
        if "jets" in self.__dict__ or self.bg.grid.n == 1:
            return self.view.det
        return volume_density(self.bg.spectrum0, self.phi_hat, self.bg.grid)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mab: float
    ent: float
    sup_r: float
    l2_r: float
    f: float
    volume: float
    min_eigen: float
    pluriclosed_residual: float
    renorm_correction: float
    mean_velocity: float = 0.0
    step: int = 0


CSV_COLUMNS = ("t", "mab", "ent", "sup_r", "l2_r", "f", "volume", "min_eigen",
               "pluriclosed_residual", "renorm_correction")


def _pluriclosed_sup(state: FlowState) -> float:
    gr = state.bg.grid
    if gr.n == 1:
        return 0.0
    spec = state.jets.spectrum if gr.n == 2 else state.metric.spectrum
    return float(np.abs(geo.pluriclosed_from_spectrum(spec, gr)).max())


def diagnostics(state: FlowState, velocity: np.ndarray | None = None,
                curvature: np.ndarray | None = None) -> DiagnosticsRecord:
    bg = state.bg
    g = state.view
    if velocity is None or curvature is None:
        velocity, curvature = state.velocity
    V = bg.V
    mab, ent = energies(bg, state.phi)
    return DiagnosticsRecord(
        t=state.t,
        mab=mab,
        ent=ent,
        sup_r=float(np.abs(curvature).max()),
        l2_r=math.sqrt(max(integrate(curvature ** 2, g), 0.0) / V),
        f=integrate(velocity ** 2, g) / V,
        volume=volume(g),
        min_eigen=g.min_eigen,
        pluriclosed_residual=_pluriclosed_sup(state),
        renorm_correction=state.renorm_correction,
        mean_velocity=integrate(velocity, g) / V,
        step=state.step_index,
    )


def renormalization_constant(state: FlowState) -> float:
    """c = (1/V) int phi omega_phi^n."""
    bg = state.bg
    weight = math.factorial(bg.grid.n) * 2 ** bg.grid.n * bg.grid.h ** bg.grid.ndim
    return float(np.sum(state.phi * state.det) * weight / bg.V)


def renormalize(state: FlowState) -> FlowState:
    """Subtract c = (1/V) int phi omega_phi^n; omega_phi is unchanged.

    The returned state carries no cached geometry: everything is rebuilt from
    the shifted potential, so a run resumed from a saved ``phi`` reproduces the
    uninterrupted run bit for bit.
    """
    c = renormalization_constant(state)
    return FlowState(state.t, state.phi - c, state.bg, state.step_index, abs(c))


def _dealiased(v: np.ndarray, grid: Grid) -> np.ndarray:
    return grid.ifft(grid.fft(v) * grid.dealias_mask).real


def _velocity(bg: Background, phi: np.ndarray) -> np.ndarray:
    return _dealiased(FlowState(0.0, phi, bg).velocity[0], bg.grid)


def stabilization_constant(g, cfg: FlowConfig) -> float:
    """max(cfg.stabilization, sup of the largest eigenvalue of g^{-1}, squared).

    ``g`` is anything with a ``min_eigen`` attribute (metric or jets).
    """
    return max(cfg.stabilization, 1.0 / g.min_eigen ** 2)


def step(state: FlowState, cfg: FlowConfig, velocity: np.ndarray | None = None) -> FlowState:
    """Advance by one step of ``cfg.dt``; ``velocity`` may pass a precomputed raw velocity."""
    bg = state.bg
    gr = bg.grid
    dt = cfg.dt
    phi = state.phi
    try:
        if velocity is None:
            velocity = state.velocity[0]
        if cfg.integrator == "rk4":
            k1 = _dealiased(velocity, gr)
            k2 = _velocity(bg, phi + 0.5 * dt * k1)
            k3 = _velocity(bg, phi + 0.5 * dt * k2)
            k4 = _velocity(bg, phi + dt * k3)
            new_phi = phi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            new_phi = _dealiased(new_phi, gr)
        else:
            A = stabilization_constant(state.view, cfg)
            S = gr.bilaplacian_symbol
            rhs = state.phi_hat + dt * (gr.fft(velocity) + A * S * state.phi_hat)
            new_hat = gr.dealias_mask * rhs / (1.0 + dt * A * S)
            new_phi = gr.ifft(new_hat).real
    except MetricError as exc:
        raise FlowAbort("degenerate", str(exc), state) from None
    if not np.all(np.isfinite(new_phi)):
        raise FlowAbort("non_finite", "non-finite potential", state)
    try:
        unshifted = FlowState(state.t + dt, new_phi, bg, state.step_index + 1)
        if cfg.integrator == "imex":
            unshifted.__dict__["phi_hat"] = new_hat
        new = renormalize(unshifted)
        g = new.view
    except MetricError as exc:
        raise FlowAbort("degenerate", str(exc), state) from None
    if g.min_eigen <= cfg.min_eigen_guard:
        raise FlowAbort("degenerate",
                        f"min eigenvalue {g.min_eigen:.4g} below guard {cfg.min_eigen_guard}", state)
    return new


@dataclass
class RunResult:
    trajectory: list[DiagnosticsRecord]
    state: FlowState
    stop_reason: str
    max_mab_increase: float = 0.0
    message: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.state.step_index


def initial_state(recipe: MetricRecipe, grid: Grid) -> FlowState:
    bg = ricci_potential(metric_from_recipe(recipe, grid))
    return FlowState(0.0, np.zeros(grid.shape), bg)


def run(recipe: MetricRecipe | None, cfg: FlowConfig, grid: Grid | None = None,
        state: FlowState | None = None, on_step=None) -> RunResult:
    """Integrate until the scalar curvature tolerance, t_max or max_steps.

    Either ``recipe`` and ``grid`` or a starting ``state`` (e.g. from a
    checkpoint) must be given.  Records are taken whenever the global step index
    is a multiple of ``cfg.record_every`` and at the final state.
    ``on_step(state)`` is called after every completed step.
    """
    if state is None:
        if recipe is None or grid is None:
            raise ValueError("need a recipe and grid, or a state")
        state = initial_state(recipe, grid)
    cfg.check_grid(state.bg.grid)
    traj: list[DiagnosticsRecord] = []
    reason, message = "", ""
    steps_taken = 0
    while True:
        v, R = state.velocity
        sup_r = float(np.abs(R).max())
        stop = ""
        if sup_r < cfg.scalar_curv_tol:
            stop = "scalar_curv_tol"
        elif state.t >= cfg.t_max - 1e-9 * cfg.dt:
            stop = "t_max"
        elif state.step_index >= cfg.max_steps:
            stop = "max_steps"
        elif not np.all(np.isfinite(v)):
            stop = "non_finite"
        if stop or state.step_index % cfg.record_every == 0:
            traj.append(diagnostics(state, v, R))
        if stop:
            reason = stop
            break
        try:
            state = step(state, cfg, velocity=v)
        except FlowAbort as exc:
            reason, message, state = exc.reason, str(exc), exc.state
            break
        steps_taken += 1
        if on_step is not None:
            on_step(state)
    mabs = [r.mab for r in traj]
    increase = max((b - a for a, b in zip(mabs, mabs[1:])), default=0.0)
    return RunResult(traj, state, reason, max(increase, 0.0), message, {"steps_taken": steps_taken})


def det_variation(g: geo.HermitianMetric) -> float:
    """(max det - min det) / mean det."""
    return float((g.det.max() - g.det.min()) / g.det.mean())
