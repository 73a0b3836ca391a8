"""Command-line interface: ``relayrange {couplings,scan,dynamics,validity}``.

Configuration is a nested JSON document. Values are resolved as built-in
defaults, then the ``--config`` file, then command-line flags (``--set
section.key=value`` and the per-command shortcuts). Every command writes its
outputs together with ``config.json`` holding the resolved configuration.
Files are written only after all results are computed, each via a temporary
file and a rename.

Exit codes: 0 success, 2 configuration/geometry error, 3 elimination failure,
4 integration failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import analytics, dynamics
from .couplings import PhysicalParams, full_dd_coupling, full_dd_near_field_limit
from .effective import adiabaticity_report, eliminate
from .exceptions import (
    ConfigError,
    DimensionError,
    EliminationError,
    GeometryError,
    InsufficientDataError,
    IntegrationError,
)
from .geometry import AtomArray, build_chain_mirrored, build_pair_mirrored, pair_geometry

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ELIMINATION = 3
EXIT_INTEGRATION = 4

SCAN_SUCCESS_FRACTION = 0.9

# geometry defaults that depend on the kind of array
_KIND_DEFAULTS = {
    "pair": {"r_imu": 6.0, "theta_imu": 0.0},
    "chain": {"r_imu": 12.0, "theta_imu": float(np.pi / 2)},
}

DEFAULTS = {
    "regime": "room",
    "out": "out",
    "params": PhysicalParams().to_dict(),
    "geometry": {
        "kind": "pair",
        "N": 21,
        "spacing": 10.0,
        "r_ij": 10.0,
        "r_imu": None,
        "theta_imu": None,
        "min_distance": 1.0,
        "path": None,
    },
    "fit": {"r_min": 10.0, "r_max": 30.0, "r_step": 0.5, "d_min": 2, "d_max": 10},
    "scan": {
        "kind": "pair",
        "r_min": None,
        "r_max": None,
        "n_r": 60,
        "theta_min": 0.0,
        "theta_max": float(np.pi),
        "n_theta": 60,
        "r_cut": 25.0,
        "ref_separation": 8,
    },
    "dynamics": {
        "mode": "compare",
        "r_ij": None,
        "site0": 0,
        "n_times": 2001,
        "periods": 1.0,
        "t_loss": None,
        "t_reinjection": None,
        "t_final": None,
        "removed_relay": 0,
        "gamma_P": [0.0, 0.001, 1.0, 100.0],
        "rtol": 1e-8,
        "atol": 1e-10,
        "max_dim": dynamics.DEFAULT_MAX_DIM,
        "observables": None,
    },
    "validity": {
        "r_ij": 10.0,
        "r_imu": 8.0,
        "theta_min": 0.0,
        "theta_max": float(np.pi),
        "n_theta": 181,
        "nf_r_min": 1e-7,
        "nf_r_max": 1e-2,
        "nf_n": 241,
        "nf_thetas": [float(np.pi / 2), 0.0],
    },
}

_CHOICES = {
    ("regime",): ("room", "cryo"),
    ("geometry", "kind"): ("pair", "chain", "file"),
    ("scan", "kind"): ("pair", "chain"),
    ("dynamics", "mode"): ("compare", "protocol", "gamma_sweep"),
}


class RunConfig:
    """Validated, fully resolved configuration."""

    def __init__(self, doc: dict | None = None):
        self.data = copy.deepcopy(DEFAULTS)
        if doc:
            self.update(doc)

    def update(self, doc: dict, _prefix=()):
        _merge(self.data, doc, DEFAULTS, _prefix)

    def set_path(self, dotted: str, value):
        keys = tuple(dotted.split("."))
        nested = value
        for k in reversed(keys):
            nested = {k: nested}
        self.update(nested)

    def __getitem__(self, key):
        return self.data[key]

    def validate(self) -> None:
        for path, allowed in _CHOICES.items():
            value = self.data
            for k in path:
                value = value[k]
            if value not in allowed:
                raise ConfigError(f"{'.'.join(path)} must be one of {allowed}, got {value!r}")
        self.params  # noqa: B018  (raises ConfigError on bad values)
        geo = self.data["geometry"]
        for key, default in _KIND_DEFAULTS.get(geo["kind"], {}).items():
            if geo[key] is None:
                geo[key] = default
        if geo["kind"] == "file" and not geo["path"]:
            raise ConfigError("geometry.kind = 'file' needs geometry.path")

    @property
    def params(self) -> PhysicalParams:
        return PhysicalParams.from_dict(self.data["params"])

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"


def _merge(target, doc, schema, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(f"{'.'.join(prefix) or 'config'} must be a JSON object")
    for key, value in doc.items():
        path = prefix + (key,)
        if key not in schema:
            raise ConfigError(f"unknown config key {'.'.join(path)!r}")
        default = schema[key]
        if isinstance(default, dict):
            _merge(target[key], value, default, path)
        else:
            target[key] = _coerce(value, default, path)


def _coerce(value, default, path):
    name = ".".join(path)
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            return [float(v) for v in value]
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot use {value!r} (expected {type(default).__name__})") from None
    return value


# --------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return "" if x is None else str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    return x


def write_outputs(out_dir, files: dict[str, str]) -> list[Path]:
    """Write every file atomically (temporary file in the target directory + rename)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, out / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        written.append(out / name)
    return written


# --------------------------------------------------------------------------
# geometry


def build_array(cfg: RunConfig, kind: str | None = None, r_ij: float | None = None) -> AtomArray:
    geo = cfg["geometry"]
    kind = kind or geo["kind"]
    if kind == "file":
        try:
            text = Path(geo["path"]).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read geometry file: {exc}") from exc
        try:
            return AtomArray.from_json(text, min_distance=geo["min_distance"])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"geometry file is not valid JSON: {exc}") from exc
    if kind == "pair":
        return build_pair_mirrored(geo["r_ij"] if r_ij is None else r_ij, geo["r_imu"],
                                   geo["theta_imu"], geo["min_distance"])
    return build_chain_mirrored(geo["N"], geo["spacing"], geo["r_imu"], geo["theta_imu"],
                                geo["min_distance"])


# --------------------------------------------------------------------------
# commands


def cmd_couplings(cfg: RunConfig) -> dict[str, str]:
    params, regime, geo, fit_cfg = cfg.params, cfg["regime"], cfg["geometry"], cfg["fit"]
    files = {}
    if geo["kind"] == "pair":
        window = analytics.PairWindow(fit_cfg["r_min"], fit_cfg["r_max"], fit_cfg["r_step"])
        r = window.values()
        J, gamma = analytics.pair_coupling_curve(r, geo["r_imu"], geo["theta_imu"], params,
                                                 regime, geo["min_distance"])
        _, gamma_cryo = analytics.pair_coupling_curve(r, geo["r_imu"], geo["theta_imu"], params,
                                                      "cryo", geo["min_distance"])
        fit = analytics.fit_power_law(r, np.abs(J))
        files["couplings_pair.csv"] = _csv(
            ["r_ij", "J", "abs_J", "gamma_eff", "gamma_eff_cryo"],
            [(r[k], J[k], abs(J[k]), gamma[k].max(), gamma_cryo[k].max()) for k in range(len(r))])
        gamma_ref, gamma_cryo_ref = float(gamma.max()), float(gamma_cryo.max())
    else:
        array = build_array(cfg)
        model = eliminate(array, params, regime)
        model_cryo = eliminate(array, params, "cryo")
        curve = analytics.average_coupling_by_separation(model.J)
        d = np.array([c[0] for c in curve], float)
        mean_abs = np.array([c[1] for c in curve])
        sel = (d >= fit_cfg["d_min"]) & (d <= fit_cfg["d_max"])
        fit = analytics.fit_power_law(d[sel], mean_abs[sel])
        files["couplings_chain.csv"] = _csv(["separation", "mean_abs_J"], zip(d.astype(int), mean_abs))
        files["J_matrix.csv"] = model.J_to_csv()
        files["effective_model.json"] = _json(model.to_dict())
        gamma_ref = float(np.max(model.gamma_eff))
        gamma_cryo_ref = float(np.max(model_cryo.gamma_eff))
    files["fit.json"] = _json({
        **fit.to_dict(),
        "kind": geo["kind"],
        "regime": regime,
        "gamma_eff": gamma_ref,
        "gamma_eff_cryo": gamma_cryo_ref,
    })
    return files


def cmd_scan(cfg: RunConfig) -> dict[str, str]:
    params, regime, sc, fit_cfg, geo = cfg.params, cfg["regime"], cfg["scan"], cfg["fit"], cfg["geometry"]
    base = analytics.ScanGrid.default(sc["kind"])
    r_min = sc["r_min"] if sc["r_min"] is not None else base.r_imu[0]
    r_max = sc["r_max"] if sc["r_max"] is not None else base.r_imu[-1]
    if sc["n_r"] < 1 or sc["n_theta"] < 1:
        raise ConfigError("scan grid is empty (n_r and n_theta must be >= 1)")
    grid = analytics.ScanGrid.linspace(r_min, r_max, sc["n_r"], sc["theta_min"], sc["theta_max"],
                                       sc["n_theta"])
    result = analytics.exponent_scan(
        sc["kind"], grid, params, regime,
        pair_window=analytics.PairWindow(fit_cfg["r_min"], fit_cfg["r_max"], fit_cfg["r_step"]),
        chain_window=analytics.ChainWindow(fit_cfg["d_min"], fit_cfg["d_max"]),
        N=geo["N"], spacing=geo["spacing"], r_cut=sc["r_cut"],
        ref_separation=sc["ref_separation"], min_distance=geo["min_distance"],
    )
    frac = float(np.mean(result.succeeded))
    if frac < SCAN_SUCCESS_FRACTION:
        first = next(e for e in result.errors if e)
        raise EliminationError(f"only {frac:.0%} of scan points succeeded; first failure: {first}")
    return {f"scan_{sc['kind']}.csv": result.to_csv(), f"scan_{sc['kind']}.json": result.to_json()}


def _observables(requested, available):
    if requested is None:
        return list(available)
    unknown = [o for o in requested if o not in available]
    if unknown:
        raise ConfigError(f"unknown observable(s) {unknown}; available: {sorted(available)}")
    return list(requested)


def _trajectory_csv(traj, names):
    return _csv(["t"] + names, ([traj.times[k]] + [traj[n][k] for n in names]
                                for k in range(len(traj.times))))


def cmd_dynamics(cfg: RunConfig) -> dict[str, str]:
    params, regime, dyn = cfg.params, cfg["regime"], cfg["dynamics"]
    array = build_array(cfg, r_ij=dyn["r_ij"])
    observables = dyn["observables"]
    files = {}
    if dyn["mode"] == "protocol":
        res = dynamics.loss_repump_protocol(
            array, params, dyn["t_loss"], dyn["t_reinjection"], dyn["t_final"],
            removed_relay=dyn["removed_relay"], site0=dyn["site0"], regime=regime,
            n_times=dyn["n_times"])
        for name in ("no_loss", "loss", "loss_repump"):
            traj = getattr(res, name)
            files[f"protocol_{name}.csv"] = _trajectory_csv(traj, _observables(observables, traj.observables))
        files["protocol.json"] = _json({
            "t_loss": res.t_loss, "t_reinjection": res.t_reinjection, "period": res.period,
            "final_fidelity_loss": float(res.loss["fidelity"][-1]),
            "final_fidelity_loss_repump": float(res.loss_repump["fidelity"][-1]),
        })
        return files
    model = eliminate(array, params, regime)
    T = dynamics.exchange_period(model, dyn["site0"])
    t_end = dyn["t_final"] if dyn["t_final"] is not None else dyn["periods"] * T
    times = np.linspace(0.0, t_end, dyn["n_times"])
    if dyn["mode"] == "compare":
        cmp = dynamics.compare_full_vs_effective(array, params, dyn["site0"], times, regime,
                                                 max_dim=dyn["max_dim"])
        files["full_trajectory.csv"] = _trajectory_csv(cmp.full, _observables(observables, cmp.full.observables))
        eff_obs = [o for o in _observables(observables, cmp.full.observables) if o in cmp.effective.observables]
        files["effective_trajectory.csv"] = _trajectory_csv(cmp.effective, eff_obs)
        files["deviation.json"] = _json({**cmp.summary(), "period": T, "regime": regime})
        return files
    runs = {}
    for g in dyn["gamma_P"]:
        runs[g] = dynamics.run_full_model(array, params, dyn["site0"], times, regime, gamma_P=g,
                                          max_dim=dyn["max_dim"], rtol=dyn["rtol"], atol=dyn["atol"])
    ref_key = f"P_up[{dyn['site0']}]"
    ref = runs[dyn["gamma_P"][0]][ref_key]
    summary = {}
    for g, traj in runs.items():
        files[f"trajectory_gammaP_{g:g}.csv"] = _trajectory_csv(traj, _observables(observables, traj.observables))
        summary[f"{g:g}"] = {"gamma_P": g, "max_deviation_from_first": float(np.max(np.abs(traj[ref_key] - ref)))}
    files["gamma_sweep.json"] = _json({"period": T, "reference_gamma_P": dyn["gamma_P"][0], "runs": summary})
    return files


def cmd_validity(cfg: RunConfig) -> dict[str, str]:
    params, regime, val, geo = cfg.params, cfg["regime"], cfg["validity"], cfg["geometry"]
    if val["n_theta"] < 1 or val["nf_n"] < 1:
        raise ConfigError("validity sweep is empty")
    rows = []
    for theta in np.linspace(val["theta_min"], val["theta_max"], val["n_theta"]):
        try:
            array = build_pair_mirrored(val["r_ij"], val["r_imu"], theta, geo["min_distance"])
        except GeometryError as exc:
            rows.append([theta, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, 0, str(exc)])
            continue
        r_munu = pair_geometry(array, 2, 3)[0]
        rep = adiabaticity_report(array, params, regime)
        rows.append([theta, r_munu, rep.lambda_lowest, rep.max_abs_delta_eff, rep.max_abs_J,
                     rep.max_gamma_eff, rep.ratio, rep.valid, ""])
    files = {"adiabaticity.csv": _csv(
        ["theta_imu", "r_munu", "lambda_lowest", "max_abs_delta_eff", "max_abs_J",
         "max_gamma_eff", "ratio", "valid", "error"], rows)}
    r = np.geomspace(val["nf_r_min"], val["nf_r_max"], val["nf_n"])
    nf_rows = []
    for theta in val["nf_thetas"]:
        full = full_dd_coupling(1.0, 1.0, params.lambda_mn, r, theta)
        near = full_dd_near_field_limit(1.0, 1.0, params.lambda_mn, r, theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(full.real - near) / np.abs(near)
        nf_rows += [(theta, r[k], full.real[k], full.imag[k], near[k], rel[k]) for k in range(len(r))]
    files["nf_vs_full.csv"] = _csv(["theta", "r_m", "re_full", "im_full", "near_field", "rel_diff_real"],
                                   nf_rows)
    return files


COMMANDS = {
    "couplings": cmd_couplings,
    "scan": cmd_scan,
    "dynamics": cmd_dynamics,
    "validity": cmd_validity,
}


# --------------------------------------------------------------------------
# argument parsing


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _global_flags(default):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON config file")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--regime", default=default, choices=("room", "cryo"))
    p.add_argument("--set", dest="overrides", action="append", default=default, metavar="KEY=VALUE",
                   help="override a config entry, e.g. geometry.r_imu=8 (repeatable)")
    return p


# (flag, config path, type) shortcuts per command
_SHORTCUTS = {
    "couplings": [("--kind", "geometry.kind", str), ("--N", "geometry.N", int),
                  ("--spacing", "geometry.spacing", float), ("--r-imu", "geometry.r_imu", float),
                  ("--theta-imu", "geometry.theta_imu", float), ("--geometry", "geometry.path", str)],
    "scan": [("--kind", "scan.kind", str), ("--n-r", "scan.n_r", int),
             ("--n-theta", "scan.n_theta", int)],
    "dynamics": [("--mode", "dynamics.mode", str), ("--kind", "geometry.kind", str),
                 ("--r-ij", "dynamics.r_ij", float), ("--t-loss", "dynamics.t_loss", float),
                 ("--t-reinjection", "dynamics.t_reinjection", float),
                 ("--observables", "dynamics.observables", lambda s: [o for o in s.split(",") if o])],
    "validity": [("--n-theta", "validity.n_theta", int), ("--r-ij", "validity.r_ij", float),
                 ("--r-imu", "validity.r_imu", float)],
}


_HELP = {
    "couplings": "effective coupling vs distance with power-law fit",
    "scan": "power-law exponent over a relay-position grid",
    "dynamics": "full vs effective dynamics, loss/repump protocol, gamma_P sweep",
    "validity": "adiabaticity report sweep and near-field vs full coupling",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relayrange", parents=[_global_flags(None)],
                                     description="Relay-mediated dipolar interaction simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[_global_flags(argparse.SUPPRESS)], help=_HELP[name])
        for flag, path, typ in _SHORTCUTS[name]:
            p.add_argument(flag, dest=f"short:{path}", type=typ, default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        cfg.update(doc)
    for item in args.overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set_path(key.strip(), _parse_value(value))
    for key, value in vars(args).items():
        if key.startswith("short:") and value is not None:
            cfg.set_path(key[len("short:"):], value)
    if args.regime:
        cfg.set_path("regime", args.regime)
    if args.out:
        cfg.set_path("out", args.out)
    cfg.validate()
    return cfg


def run(argv=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        files = COMMANDS[args.command](cfg)
    except (ConfigError, GeometryError, DimensionError, InsufficientDataError, ValueError) as exc:
        code, exc_ = EXIT_CONFIG, exc
    except EliminationError as exc:
        code, exc_ = EXIT_ELIMINATION, exc
    except IntegrationError as exc:
        code, exc_ = EXIT_INTEGRATION, exc
    else:
        files["config.json"] = cfg.to_json()
        write_outputs(cfg["out"], files)
        return EXIT_OK
    print(f"relayrange {args.command}: {type(exc_).__name__}: {exc_}", file=stderr)
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
