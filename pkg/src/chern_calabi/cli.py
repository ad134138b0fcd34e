"""Command line front end: ``run``, ``verify`` and ``gen``.

Configuration files hold one ``key = value`` pair per line; ``#`` starts a
comment.  Unknown keys are errors.  All outputs go to ``output_dir`` unless the
environment variable ``CHERN_CALABI_OUTPUT_DIR`` overrides it.

Exit codes
----------
0  scalar curvature tolerance reached (``run``), all checks passed (``verify``),
   or fixture written (``gen``)
1  verification failure
2  configuration error (nothing is written)
3  flow aborted: degenerate metric or non-finite values
4  ``t_max`` reached
5  ``max_steps`` reached
6  checkpoint could not be read
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .flow import CSV_COLUMNS, FlowConfig, FlowState, det_variation, initial_state, run
from .functionals import ricci_potential
from .lattice import Grid, GridError
from .metricgen import MetricRecipe, metric_from_recipe

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_T_MAX = 4
EXIT_MAX_STEPS = 5
EXIT_CHECKPOINT = 6

STOP_EXIT = {
    "scalar_curv_tol": EXIT_OK,
    "degenerate": EXIT_DEGENERATE,
    "non_finite": EXIT_DEGENERATE,
    "t_max": EXIT_T_MAX,
    "max_steps": EXIT_MAX_STEPS,
}

OUTPUT_ENV = "CHERN_CALABI_OUTPUT_DIR"
CHECKPOINT_MAGIC = "chern-calabi-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_bool(s: str) -> bool:
    try:
        return _BOOL[s.lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {s!r}") from None


# accepted keys and their value parsers, grouped by purpose
_GRID_KEYS = {"n": int, "N": int, "L": float}
_RECIPE_KEYS = {"kind": str, "seed": int, "amplitude": float, "max_mode": int, "mode": int}
_FLOW_KEYS = {"integrator": str, "dt": float, "t_max": float, "max_steps": int,
              "scalar_curv_tol": float, "min_eigen_guard": float, "stabilization": float,
              "record_every": int}
_EMIT_KEYS = {"output_dir": str, "csv": _parse_bool, "summary": _parse_bool,
              "checkpoints": _parse_bool, "checkpoint_every": int, "resume": str}
_VERIFY_KEYS = {"seeds": int, "first_seed": int, "aux_seed": int, "control_mode": _parse_bool}


@dataclass
class RunConfig:
    grid: Grid
    recipe: MetricRecipe
    flow: FlowConfig
    output_dir: str = "output"
    csv: bool = True
    summary: bool = True
    checkpoints: bool = False
    checkpoint_every: int = 100
    resume: str = ""
    seeds: int = 1
    first_seed: int = 0
    aux_seed: int = 0
    control_mode: bool = False


def parse_config_text(text: str, allowed: set[str] | None = None) -> RunConfig:
    """Parse a flat ``key = value`` configuration.

    ``allowed`` restricts the accepted keys (used by ``gen``, which only needs
    the grid and recipe).
    """
    tables = (_GRID_KEYS, _RECIPE_KEYS, _FLOW_KEYS, _EMIT_KEYS, _VERIFY_KEYS)
    known = {k: t[k] for t in tables for k in t}
    allowed = set(known) if allowed is None else allowed
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known or key not in allowed:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = known[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    try:
        grid = Grid(int(values.get("n", 1)), int(values.get("N", 32)), float(values.get("L", 1.0)))
        recipe = MetricRecipe(**{k: values[k] for k in _RECIPE_KEYS if k in values})
        flow = FlowConfig(**{k: values[k] for k in _FLOW_KEYS if k in values})
        flow.check_grid(grid)
    except (GridError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if recipe.kind in ("random_pluriclosed", "constant_det_fixture") and grid.n != 2:
        raise ConfigError(f"kind {recipe.kind!r} needs n = 2")
    if recipe.kind == "conformal" and grid.n != 1:
        raise ConfigError("kind 'conformal' needs n = 1")
    cfg = RunConfig(grid, recipe, flow, **{k: values[k] for k in (*_EMIT_KEYS, *_VERIFY_KEYS) if k in values})
    if cfg.checkpoint_every < 1:
        raise ConfigError("checkpoint_every must be >= 1")
    if cfg.seeds < 1:
        raise ConfigError("seeds must be >= 1")
    if cfg.control_mode and grid.n != 2:
        raise ConfigError("control_mode needs n = 2: every n = 1 metric is Gauduchon")
    return cfg


def load_config(path: str | os.PathLike, allowed: set[str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config_text(text, allowed)


def output_dir(cfg: RunConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: a text header of ``key=value`` lines terminated by ``end_header``,
# then ``phi_count`` little-endian float64 values of phi in C order over the
# grid axes (x^1, y^1, ..., x^n, y^n), then the components of omega0 as
# little-endian float64 pairs (real, imaginary), component-major in the order
# g_{0 0bar}, g_{0 1bar}, ..., each block in the same site order.


def write_checkpoint(path: str | os.PathLike, state: FlowState, cfg: FlowConfig,
                     recipe: MetricRecipe, rng_seed: int = 0) -> None:
    gr = state.bg.grid
    phi = np.ascontiguousarray(state.phi, dtype="<f8")
    G0 = np.ascontiguousarray(state.bg.omega0.g, dtype="<c16")
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "n": gr.n,
        "N": gr.N,
        "L": float(gr.L).hex(),
        "recipe": recipe.fingerprint(),
        "t": float(state.t).hex(),
        "dt": float(cfg.dt).hex(),
        "integrator": cfg.integrator,
        "step": state.step_index,
        "renorm_correction": float(state.renorm_correction).hex(),
        "rng_seed": rng_seed,
        "phi_count": phi.size,
        "omega0_count": G0.size,
    }
    text = "".join(f"{k}={v}\n" for k, v in header.items()) + "end_header\n"
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(text.encode("ascii"))
        fh.write(phi.tobytes())
        fh.write(G0.tobytes())
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    header: dict
    grid: Grid
    phi: np.ndarray
    omega0: np.ndarray

    @property
    def t(self) -> float:
        return float.fromhex(self.header["t"])

    @property
    def step(self) -> int:
        return int(self.header["step"])

    def state(self) -> FlowState:
        g0 = geo.build_metric(self.omega0, self.grid)
        bg = ricci_potential(g0)
        return FlowState(self.t, self.phi, bg, self.step,
                         float.fromhex(self.header["renorm_correction"]))


_HEADER_LIMIT = 1 << 16


def read_checkpoint(path: str | os.PathLike) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    end = data.find(b"end_header\n", 0, _HEADER_LIMIT)
    if end < 0:
        raise CheckpointError("checkpoint header missing or truncated")
    header = {}
    try:
        for line in data[:end].decode("ascii").splitlines():
            k, v = line.split("=", 1)
            header[k] = v
    except (UnicodeDecodeError, ValueError):
        raise CheckpointError("malformed checkpoint header") from None
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    if header.get("version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
    try:
        grid = Grid(int(header["n"]), int(header["N"]), float.fromhex(header["L"]))
        n_phi, n_g = int(header["phi_count"]), int(header["omega0_count"])
        float.fromhex(header["t"]), float.fromhex(header["renorm_correction"]), int(header["step"])
    except (KeyError, ValueError, GridError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    if n_phi != grid.size or n_g != grid.n ** 2 * grid.size:
        raise CheckpointError("checkpoint block lengths do not match the grid")
    body = data[end + len(b"end_header\n"):]
    expected = 8 * n_phi + 16 * n_g
    if len(body) != expected:
        raise CheckpointError(f"checkpoint body has {len(body)} bytes, expected {expected}")
    phi = np.frombuffer(body, dtype="<f8", count=n_phi).astype(np.float64).reshape(grid.shape)
    G0 = np.frombuffer(body, dtype="<c16", offset=8 * n_phi).astype(np.complex128)
    G0 = G0.reshape((grid.n, grid.n) + grid.shape)
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(G0))):
        raise CheckpointError("checkpoint contains non-finite values")
    return Checkpoint(header, grid, phi, G0)


# ---------------------------------------------------------------------------
# commands


def _csv_line(rec) -> str:
    return ",".join(repr(float(getattr(rec, c))) for c in CSV_COLUMNS)


def read_csv(path: str | os.PathLike) -> list[dict[str, float]]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    return [dict(zip(CSV_COLUMNS, map(float, ln.split(",")))) for ln in lines[1:] if ln]


def cmd_run(config_path: str) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.resume:
        try:
            ck = read_checkpoint(cfg.resume)
        except CheckpointError as exc:
            print(f"checkpoint error: {exc}", file=sys.stderr)
            return EXIT_CHECKPOINT
        if ck.grid != cfg.grid:
            print("config error: checkpoint grid differs from config grid", file=sys.stderr)
            return EXIT_CONFIG
        state = ck.state()
    else:
        try:
            state = initial_state(cfg.recipe, cfg.grid)
        except geo.MetricError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)

    def on_step(s: FlowState):
        if cfg.checkpoints and s.step_index % cfg.checkpoint_every == 0:
            write_checkpoint(out / f"checkpoint_{s.step_index:08d}.ckpt", s, cfg.flow, cfg.recipe,
                             cfg.recipe.seed)

    result = run(None, cfg.flow, state=state, on_step=on_step)
    final = result.state
    if cfg.checkpoints:
        write_checkpoint(out / "checkpoint_final.ckpt", final, cfg.flow, cfg.recipe, cfg.recipe.seed)
    if cfg.csv:
        with open(out / "trajectory.csv", "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for rec in result.trajectory:
                fh.write(_csv_line(rec) + "\n")
    code = STOP_EXIT.get(result.stop_reason, EXIT_DEGENERATE)
    if cfg.summary:
        last = result.trajectory[-1] if result.trajectory else None
        try:
            dvar = det_variation(final.metric)
        except geo.MetricError:
            dvar = float("nan")
        summary = {
            "stop_reason": result.stop_reason,
            "message": result.message,
            "exit_code": code,
            "steps": final.step_index,
            "t": final.t,
            "sup_r": last.sup_r if last else None,
            "l2_r": last.l2_r if last else None,
            "f": last.f if last else None,
            "mab": last.mab if last else None,
            "det_variation": dvar,
            "max_mab_increase": result.max_mab_increase,
            "recipe": cfg.recipe.fingerprint(),
            "wall_time": time.perf_counter() - t0,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"stop_reason={result.stop_reason} steps={final.step_index} t={final.t:.6g}")
    return code


def cmd_verify(config_path: str) -> int:
    from . import verify

    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    reports = []
    for s in range(cfg.first_seed, cfg.first_seed + cfg.seeds):
        recipe = MetricRecipe(**{**asdict(cfg.recipe), "seed": s})
        try:
            g = metric_from_recipe(recipe, cfg.grid)
        except geo.MetricError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if cfg.control_mode:
            reports.append(verify.control_suite(g, cfg.aux_seed + s, recipe.fingerprint()))
        else:
            reports.append(verify.identity_suite(g, cfg.aux_seed + s, recipe.fingerprint()))
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    text = "".join(r.to_text() for r in reports)
    (out / "identity_report.txt").write_text(text)
    sys.stdout.write(text)
    ok = all(r.passed for r in reports)
    if cfg.control_mode:
        print("controls behaved" if ok else "controls did not behave")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


GEN_KEYS = set(_GRID_KEYS) | set(_RECIPE_KEYS) | {"output_dir"}


def cmd_gen(config_path: str) -> int:
    try:
        cfg = load_config(config_path, GEN_KEYS)
        state = initial_state(cfg.recipe, cfg.grid)
    except (ConfigError, geo.MetricError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fixture.ckpt"
    write_checkpoint(path, state, cfg.flow, cfg.recipe, cfg.recipe.seed)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="chern-calabi", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "integrate the flow"), ("verify", "run the identity suite"),
                        ("gen", "write a fixture metric as a checkpoint")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
    args = parser.parse_args(argv)
    return {"run": cmd_run, "verify": cmd_verify, "gen": cmd_gen}[args.command](args.config)


if __name__ == "__main__":
    sys.exit(main())
