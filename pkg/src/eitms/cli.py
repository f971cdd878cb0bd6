"""Config-driven command-line pipeline: mesh, simulate, reconstruct, evaluate, render.

Configs are plain text with ``[section]`` headers and ``key = value`` lines;
``--set section.key=value`` overrides individual entries. See the README for
the full key reference and a worked example.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .cem import CemError, ExcitationSet, fit_homogeneous, voltage_excitations
from .mesh import MeshError, generate_disk_mesh, load_mesh, save_mesh
from .metrics import (
    default_color_scale,
    hwhm_areas,
    read_field_csv,
    relative_error,
    render_field,
    write_field_csv,
)
from .optimize import (
    OptimizeError,
    PdpsParams,
    Regularizer,
    RipgnParams,
    ripgn_run,
    write_trace_csv,
)
from .phantoms import (
    Inclusion,
    Phantom,
    PhantomError,
    build_weights,
    load_measurements,
    realize_phantom,
    save_measurements,
    simulate_measurements,
)
from .regularizers import ATParams

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2


class ConfigError(ValueError):
    """Malformed configuration file or override."""


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, dict[str, str]]:
    """Parse the section/key-value grammar into nested ordered dicts."""
    cfg: dict[str, dict[str, str]] = {}
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"{origin}: line {ln}: empty section name")
            cfg.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}: line {ln}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{origin}: line {ln}: key before any [section]")
        key, value = line.split("=", 1)
        cfg[section][key.strip()] = value.strip()
    return cfg


def parse_config(path) -> dict[str, dict[str, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, origin=str(path))


def serialize_config(cfg: dict[str, dict[str, str]]) -> str:
    lines = []
    for section, entries in cfg.items():
        lines.append(f"[{section}]")
        for key, value in entries.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def apply_overrides(cfg, sets: list[str]) -> None:
    for item in sets:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        cfg.setdefault(section.strip(), {})[key.strip()] = value.strip()


def _get(cfg, section, key, cast, default=None):
    entries = cfg.get(section, {})
    if key not in entries:
        if default is not None:
            return default
        raise ConfigError(f"missing required config key [{section}] {key}")
    raw = entries[key]
    try:
        if cast is bool:
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def parse_inclusions(spec: str) -> tuple[Inclusion, ...]:
    """Parse 'shape:params:value' items separated by semicolons.

    Example: ``circle:-6,3,3.5:10.0; square:5,-4.5,5.5:1e-4``.
    """
    out = []
    for item in spec.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"inclusion {item!r} must be shape:params:value")
        try:
            params = tuple(float(v) for v in parts[1].split(","))
            value = float(parts[2])
            out.append(Inclusion(parts[0].strip(), params, value))
        except (ValueError, PhantomError) as exc:
            raise ConfigError(f"bad inclusion {item!r}: {exc}") from exc
    return tuple(out)


def _excitations(cfg, n_electrodes) -> ExcitationSet:
    zeta = _get(cfg, "simulation", "zeta", float, 1e-5)
    amplitude = _get(cfg, "simulation", "amplitude", float, 1.0)
    return voltage_excitations(n_electrodes, amplitude, zeta)


def cmd_mesh(cfg) -> int:
    mesh = generate_disk_mesh(
        _get(cfg, "mesh", "radius", float),
        _get(cfg, "mesh", "n_electrodes", int),
        _get(cfg, "mesh", "coverage", float),
        _get(cfg, "mesh", "target_edge_length", float),
    )
    path = _get(cfg, "mesh", "path", str)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, path)
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_elements} elements, "
          f"{mesh.n_electrodes} electrodes -> {path}")
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    mesh = load_mesh(_get(cfg, "simulation", "mesh", str))
    phantom = Phantom(
        background_mean=_get(cfg, "phantom", "background_mean", float, 1.0),
        background_std=_get(cfg, "phantom", "background_std", float, 0.1),
        correlation_length=_get(cfg, "phantom", "correlation_length", float),
        inclusions=parse_inclusions(_get(cfg, "phantom", "inclusions", str, "")),
    )
    truth = realize_phantom(mesh, phantom, _get(cfg, "phantom", "seed", int, 0))
    exc = _excitations(cfg, mesh.n_electrodes)
    ms = simulate_measurements(
        mesh, truth, exc,
        noise_rel=_get(cfg, "simulation", "noise_rel", float, 1e-4),
        seed=_get(cfg, "simulation", "seed", int, 0),
    )
    meas_path = _get(cfg, "simulation", "measurements", str)
    Path(meas_path).parent.mkdir(parents=True, exist_ok=True)
    save_measurements(ms, meas_path)
    truth_path = _get(cfg, "simulation", "truth", str, "")
    if truth_path:
        write_field_csv(mesh, truth, truth_path)
    print(f"simulate: M={ms.n_measurements} measurements -> {meas_path}")
    return EXIT_OK


def _reconstruction_params(cfg):
    kind = _get(cfg, "reconstruction", "regularizer", str, "at")
    at = ATParams(
        lam=_get(cfg, "reconstruction", "lambda", float, 1e-3),
        alpha=_get(cfg, "reconstruction", "alpha", float, 1e-2),
        epsilon_lambda=_get(cfg, "reconstruction", "epsilon_lambda", float, 0.0),
        halved_z_quadrature=_get(cfg, "reconstruction", "halved_z_quadrature", bool, False),
    )
    reg = Regularizer(kind, at=at,
                      weight=_get(cfg, "reconstruction", "reg_weight", float, 1.0))
    ripgn = RipgnParams(
        beta=_get(cfg, "reconstruction", "beta", float, 0.01),
        w=_get(cfg, "reconstruction", "w", float, 0.1),
        max_outer=_get(cfg, "reconstruction", "max_outer", int, 300),
        outer_tol=_get(cfg, "reconstruction", "outer_tol", float, 1e-5),
    )
    pdps = PdpsParams(
        t=_get(cfg, "reconstruction", "t", float, 0.01),
        s_update_period=_get(cfg, "reconstruction", "s_update_period", int, 100),
        max_inner=_get(cfg, "reconstruction", "max_inner", int, 2000),
        inner_tol=_get(cfg, "reconstruction", "inner_tol", float, 1e-6),
    )
    return reg, ripgn, pdps


def cmd_reconstruct(cfg) -> int:
    mesh = load_mesh(_get(cfg, "reconstruction", "mesh", str))
    ms = load_measurements(_get(cfg, "reconstruction", "measurements", str))
    weights = build_weights(ms, a=_get(cfg, "reconstruction", "a", float, 1.0))
    reg, ripgn, pdps = _reconstruction_params(cfg)
    exc = _excitations(cfg, mesh.n_electrodes)

    result = ripgn_run(
        mesh, exc, ms, weights, reg, ripgn, pdps,
        gamma_max=_get(cfg, "reconstruction", "gamma_max", float, 1e10),
        gamma_min_factor=_get(cfg, "reconstruction", "gamma_min_factor", float, 1e-5),
    )
    if result.failed:
        print(f"reconstruct: solver failure: {result.failure_message}", file=sys.stderr)
        return EXIT_ERROR

    out_dir = Path(_get(cfg, "outputs", "dir", str, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_field_csv(mesh, result.gamma, out_dir / "gamma.csv")
    if result.z is not None:
        write_field_csv(mesh, result.z, out_dir / "z.csv")
    write_trace_csv(result.trace, out_dir / "trace.csv")
    if _get(cfg, "outputs", "render", bool, False):
        resolution = _get(cfg, "outputs", "render_resolution", int, 512)
        (out_dir / "gamma.ppm").write_bytes(
            render_field(mesh, result.gamma, default_color_scale(), resolution))
        if result.z is not None:
            zscale = default_color_scale()
            (out_dir / "z.ppm").write_bytes(
                render_field(mesh, result.z, zscale, resolution))

    status = "converged" if result.converged else "max-iteration stop"
    print(f"reconstruct: {status} after {result.n_outer} outer iterations, "
          f"objective {result.trace[0].objective:.4g} -> {result.trace[-1].objective:.4g}, "
          f"gamma_hmg {result.gamma_hmg:.4g}, wall {result.wall_time:.1f}s")
    return EXIT_OK if result.converged else EXIT_MAX_ITER


def cmd_evaluate(cfg) -> int:
    mesh_rec = load_mesh(_get(cfg, "evaluate", "mesh", str))
    xy, gamma_rec = read_field_csv(_get(cfg, "evaluate", "gamma", str))
    if len(gamma_rec) != mesh_rec.n_nodes or not np.allclose(xy, mesh_rec.nodes):
        raise ConfigError("reconstruction field does not match its mesh")
    mesh_true = load_mesh(_get(cfg, "evaluate", "truth_mesh", str))
    xy_t, gamma_true = read_field_csv(_get(cfg, "evaluate", "truth", str))
    if len(gamma_true) != mesh_true.n_nodes or not np.allclose(xy_t, mesh_true.nodes):
        raise ConfigError("truth field does not match its mesh")

    re = relative_error(mesh_rec, gamma_rec, mesh_true, gamma_true)
    lines = ["metric,fraction,value", f"relative_error_percent,,{re!r}"]
    for frac in (0.5, 0.7):
        res = hwhm_areas(mesh_rec, gamma_rec, threshold_fraction=frac)
        lines.append(f"conductive_area,{frac},{res.conductive_area!r}")
        lines.append(f"resistive_area,{frac},{res.resistive_area!r}")
    report = "\n".join(lines) + "\n"
    out = _get(cfg, "evaluate", "report", str, "")
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(report, encoding="ascii")
    print(report, end="")
    return EXIT_OK


def cmd_render(cfg) -> int:
    mesh = load_mesh(_get(cfg, "render", "mesh", str))
    xy, field = read_field_csv(_get(cfg, "render", "field", str))
    if len(field) != mesh.n_nodes:
        raise ConfigError("field length does not match mesh")
    out = _get(cfg, "render", "out", str)
    resolution = _get(cfg, "render", "resolution", int, 512)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_bytes(render_field(mesh, field, default_color_scale(), resolution))
    print(f"render: {out}")
    return EXIT_OK


_COMMANDS = {
    "mesh": cmd_mesh,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eitms",
        description="EIT simulation and reconstruction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config entry")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        apply_overrides(cfg, args.set)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, MeshError, CemError, PhantomError, OptimizeError,
            ValueError, OSError) as exc:
        print(f"eitms {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
