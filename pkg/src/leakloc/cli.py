"""Command-line front end.

Six subcommands drive the package end to end::

    leakloc bcrlb    --config cfg.toml --out runs/bounds --K 20,40 --L 1,50
    leakloc estimate --config cfg.toml --measurements z.csv
    leakloc dataset  --config cfg.toml --out data/set --K 40 --train 35000
    leakloc train    --dataset data/set.csv --out models/net --width 256
    leakloc evaluate --config cfg.toml --out runs/mse --trials 1000
    leakloc leakmap  --config cfg.toml --out maps/slice --d 6 --phi 1.5708

Configuration is TOML: a ``[scenario]`` table with the field names of
:func:`leakloc.harness.scenario_from_config` (powers in dBm, carrier in
GHz, geometry in meters and radians), plus optional per-command tables
(``[bcrlb]``, ``[dataset]``, ``[train]``, ``[evaluate]``,
``[leakmap]``, ``[estimate]``) whose keys mirror the long flags. Flags
override config values; list flags accept either commas or repetition
(``--K 20,40`` and ``--K 20 40`` are the same; negative noise lists
need the equals form, ``--sigma2=-65,-75``).

Every output is a CSV (or checkpoint) plus a JSON sidecar holding the
fully resolved configuration and seed. A sidecar can be passed
straight back as ``--config``: the same command rerun from it
reproduces the output file bitwise. All files are written atomically;
a failed run leaves nothing behind.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                   # Python < 3.11
    import tomli as tomllib

from . import __version__
from .deepsets import (
    TrainConfig,
    TrainingDiverged,
    evaluate_mse,
    make_dataset,
    save_model,
    train,
)
from .estimators import GridSpec, grid_search
from .geometry import SensorSet, UeLocation
from .harness import (
    DeepSetsProfile,
    Scenario,
    _atomic_write_text,
    read_dataset,
    run_bcrlb_sweep,
    run_mse_sweep,
    sample_sensor_set,
    scenario_from_config,
    scenario_to_config,
    sidecar_path,
    write_dataset,
    write_sweep,
)
from .leakage import LeakageBackend, gain_profile

_BACKENDS = {"exact": LeakageBackend.EXACT, "fresnel": LeakageBackend.FRESNEL}


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):          # argparse default exits with 2
        raise UsageError(message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise UsageError(f"invalid JSON config {p}: {e}") from None
        return _normalize_sidecar(doc)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"invalid TOML config {p}: {e}") from None


def _normalize_sidecar(doc: dict) -> dict:
    """Emitted sidecars double as configs for the command that wrote them."""
    if doc.get("format") == "leakloc-dataset":
        meta = doc.get("meta", {})
        cfg = {"dataset": meta}
        if "scenario" in meta:
            cfg["scenario"] = meta["scenario"]
        return cfg
    if "tool" in doc and "scenario" in doc:
        return {"scenario": doc["scenario"], str(doc["tool"]): doc}
    return doc


def _scenario(cfg: Mapping) -> Scenario:
    if "scenario" not in cfg:
        raise UsageError("config has no [scenario] table")
    return scenario_from_config(cfg)


def _table(cfg: Mapping, name: str) -> Mapping:
    table = cfg.get(name, {})
    if not isinstance(table, Mapping):
        raise UsageError(f"config entry [{name}] must be a table")
    return table


def _pick(flag, table: Mapping, keys: Sequence[str], default):
    """Flag value, else the first present config key, else the default."""
    if flag is not None:
        return flag
    for key in keys:
        if key in table:
            return table[key]
    return default


def _ints(value, what: str) -> list[int]:
    try:
        if isinstance(value, str):
            value = value.split(",")
        return [int(v) for v in value]
    except (TypeError, ValueError):
        raise UsageError(f"{what} must be a list of integers") from None


def _floats(value, what: str) -> list[float]:
    try:
        if isinstance(value, str):
            value = value.split(",")
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise UsageError(f"{what} must be a list of numbers") from None


def _flatten(tokens: list[str] | None) -> list[str] | None:
    if tokens is None:
        return None
    out: list[str] = []
    for t in tokens:
        out.extend(p for p in t.split(",") if p)
    return out


def _backend(name, table: Mapping, default: str) -> LeakageBackend:
    resolved = str(_pick(name, table, ["backend"], default)).lower()
    if resolved not in _BACKENDS:
        raise UsageError(f"unknown backend '{resolved}' "
                         f"(choose from {sorted(_BACKENDS)})")
    return _BACKENDS[resolved]


def _out_path(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    return Path(args.out)


# -- subcommands ------------------------------------------------------------

def _cmd_bcrlb(args) -> int:
    cfg = _load_config(args.config)
    scenario = _scenario(cfg)
    table = _table(cfg, "bcrlb")
    ks = _ints(_pick(_flatten(args.k_list), table, ["k_grid"], [20, 40]),
               "--K")
    ls = _ints(_pick(_flatten(args.l_list), table, ["l_grid"], [1, 50]),
               "--L")
    sigmas = _floats(_pick(_flatten(args.sigma2), table, ["sigma2_dbm_grid"],
                           [-65.0, -75.0, -85.0]), "--sigma2")
    result = run_bcrlb_sweep(
        scenario, ks, ls, sigmas,
        n_geometries=int(_pick(args.geometries, table, ["n_geometries"], 100)),
        n_prior_samples=int(_pick(args.prior_samples, table,
                                  ["n_prior_samples"], 256)),
        backend=_backend(args.backend, table, "fresnel"),
        seed=args.seed if args.seed is not None else table.get("seed"),
    )
    csv_path, side = write_sweep(_out_path(args), result)
    print(f"wrote {csv_path} ({len(result.rows)} rows) and {side}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    scenario = _scenario(cfg)
    table = _table(cfg, "evaluate")
    ks = _ints(_pick(_flatten(args.k_list), table, ["k_grid"], [20, 40]),
               "--K")
    ls = _ints(_pick(_flatten(args.l_list), table, ["l_grid"], [1, 50]),
               "--L")
    sigmas = _floats(_pick(_flatten(args.sigma2), table, ["sigma2_dbm_grid"],
                           [-65.0, -75.0, -85.0]), "--sigma2")
    methods = [str(m) for m in
               _pick(_flatten(args.methods), table, ["methods"],
                     ["grid_search"])]

    grid_table = table.get("grid", {})
    d_range = scenario.d_range_m
    phi_range = scenario.phi_range_rad
    grid = GridSpec(
        tuple(grid_table.get("d_range_m", d_range)),
        tuple(grid_table.get("phi_range_rad", phi_range)),
        int(_pick(args.grid_d, grid_table, ["n_d"], 100)),
        int(_pick(args.grid_phi, grid_table, ["n_phi"], 180)),
    )

    prof_table = table.get("deepsets_profile", {})
    profile = DeepSetsProfile(
        width=int(_pick(args.width, prof_table, ["width"], 64)),
        n_train=int(_pick(args.train_samples, prof_table, ["n_train"], 5000)),
        n_val=int(_pick(args.val_samples, prof_table, ["n_val"], 2000)),
        two_heads=bool(prof_table.get("two_heads", True)),
        train_config=TrainConfig(
            learning_rate=float(prof_table.get("learning_rate", 1e-3)),
            batch_size=int(prof_table.get("batch_size", 32)),
            max_epochs=int(_pick(args.epochs, prof_table, ["max_epochs"],
                                 150)),
            patience=int(_pick(args.patience, prof_table, ["patience"], 12)),
        ),
    )
    result = run_mse_sweep(
        scenario, ks, ls, sigmas,
        methods=methods,
        n_trials=int(_pick(args.trials, table,
                           ["n_trials", "n_trials_per_replication"], 200)),
        n_sensor_sets=int(_pick(args.sensor_sets, table, ["n_sensor_sets"],
                                5)),
        grid=grid,
        n_prior_samples=int(_pick(args.prior_samples, table,
                                  ["n_prior_samples"], 256)),
        profile=profile,
        backend=_backend(args.backend, table, "exact"),
        seed=args.seed if args.seed is not None else table.get("seed"),
    )
    csv_path, side = write_sweep(_out_path(args), result)
    print(f"wrote {csv_path} ({len(result.rows)} rows) and {side}")
    return 0


def _read_measurements(path: Path) -> tuple[SensorSet, np.ndarray]:
    required = ["sensor_id", "d_k_m", "theta_k_rad", "z_mean"]
    if not path.is_file():
        raise UsageError(f"measurements file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or [])
        if missing:
            raise UsageError(
                f"measurements file lacks columns: {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise UsageError("measurements file has no data rows")
    try:
        ranges = np.array([float(r["d_k_m"]) for r in rows])
        azimuths = np.array([float(r["theta_k_rad"]) for r in rows])
        z = np.array([float(r["z_mean"]) for r in rows])
    except ValueError as e:
        raise UsageError(f"bad measurement value: {e}") from None
    return SensorSet(ranges, azimuths), z


def _cmd_estimate(args) -> int:
    cfg = _load_config(args.config)
    scenario = _scenario(cfg)
    table = _table(cfg, "estimate")
    if args.measurements is None:
        raise UsageError("--measurements is required")
    sensors, z = _read_measurements(Path(args.measurements))
    sensors.assert_far_field(scenario.geom)
    grid = GridSpec(scenario.d_range_m, scenario.phi_range_rad,
                    int(_pick(args.grid_d, table, ["n_d"], 100)),
                    int(_pick(args.grid_phi, table, ["n_phi"], 180)))
    backend = _backend(args.backend, table, "exact")
    est = grid_search(z, grid, scenario.geom, sensors, scenario.p_t_watts,
                      scenario.sigma2_watts, backend)
    line = (f"d_hat_m={est.psi_hat.distance_m!r} "
            f"phi_hat_rad={est.psi_hat.azimuth_rad!r} "
            f"objective={est.objective!r}")
    print(line)
    if args.out is not None:
        out = Path(args.out)
        if out.suffix != ".csv":
            out = out.with_suffix(out.suffix + ".csv")
        _atomic_write_text(out, "d_hat_m,phi_hat_rad,objective\n"
                           f"{est.psi_hat.distance_m!r},"
                           f"{est.psi_hat.azimuth_rad!r},"
                           f"{est.objective!r}\n")
        _atomic_write_text(sidecar_path(out), json.dumps({
            "tool": "estimate",
            "version": __version__,
            "scenario": scenario_to_config(scenario),
            "measurements": str(args.measurements),
            "grid": {"n_d": grid.n_d, "n_phi": grid.n_phi},
            "backend": backend.name.lower(),
        }, indent=2, sort_keys=True) + "\n")
        print(f"wrote {out}")
    return 0


def _cmd_dataset(args) -> int:
    cfg = _load_config(args.config)
    scenario = _scenario(cfg)
    table = _table(cfg, "dataset")
    n_train = int(_pick(args.train, table, ["n_train"], 35_000))
    n_val = int(_pick(args.val, table, ["n_val"], 15_000))
    n_test = int(_pick(args.test, table, ["n_test"], 1_000))
    seed = int(_pick(args.seed, table, ["seed"], scenario.seed))

    if scenario.sensors is not None:
        sensors = scenario.sensors
    else:
        k_raw = _pick(_flatten(args.k_list), table, ["k_sensors"], None)
        if k_raw is None:
            raise UsageError("--K (sensor count) is required unless the "
                             "scenario fixes a sensor set")
        k_vals = _ints(k_raw, "--K")
        if len(k_vals) != 1:
            raise UsageError("dataset generation takes exactly one --K")
        sensor_ss, _ = np.random.SeedSequence(seed).spawn(2)
        sensors = sample_sensor_set(scenario, k_vals[0], sensor_ss)
    ds_scenario = replace(scenario, sensors=sensors)
    splits = dict(zip(("train", "val", "test"),
                      make_dataset(ds_scenario, n_train, n_val, n_test,
                                   seed=seed)))
    meta = {
        "tool": "dataset",
        "version": __version__,
        "scenario": scenario_to_config(ds_scenario),
        "n_train": n_train,
        "n_val": n_val,
        "n_test": n_test,
        "seed": seed,
    }
    csv_path, side = write_dataset(_out_path(args), splits, sensors, meta)
    total = sum(len(s) for s in splits.values())
    print(f"wrote {csv_path} ({total} samples over {len(sensors)} sensors) "
          f"and {side}")
    return 0


def _cmd_train(args) -> int:
    if args.dataset is None:
        raise UsageError("--dataset is required")
    splits, sensors, meta = read_dataset(Path(args.dataset))
    if "train" not in splits or "val" not in splits:
        raise UsageError("dataset needs 'train' and 'val' splits")
    cfg = _load_config(args.config)
    table = _table(cfg, "train")
    scenario_cfg = cfg.get("scenario", meta.get("scenario"))
    if scenario_cfg is None:
        raise UsageError("no scenario available: pass --config or use a "
                         "dataset sidecar that embeds one")
    scenario = scenario_from_config({"scenario": scenario_cfg})

    width = int(_pick(args.width, table, ["width"], 64))
    two_heads = bool(table.get("two_heads", True))
    if args.single_head:
        two_heads = False
    config = TrainConfig(
        learning_rate=float(_pick(args.lr, table, ["learning_rate"], 1e-3)),
        batch_size=int(_pick(args.batch, table, ["batch_size"], 32)),
        max_epochs=int(_pick(args.epochs, table, ["max_epochs"], 150)),
        patience=int(_pick(args.patience, table, ["patience"], 12)),
        seed=int(_pick(args.seed, table, ["seed"], 0)),
    )
    model, history = train(splits["train"], splits["val"], config,
                           width=width, two_heads=two_heads,
                           d_box=scenario.d_range_m,
                           phi_box=scenario.phi_range_rad)
    target = save_model(_out_path(args), model)
    doc = {
        "tool": "train",
        "version": __version__,
        "scenario": scenario_cfg,
        "dataset": str(args.dataset),
        "checkpoint": target.name,
        "width": width,
        "two_heads": two_heads,
        "train_config": {
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "max_epochs": config.max_epochs,
            "patience": config.patience,
            "seed": config.seed,
        },
        "best_epoch": history.best_epoch,
        "train_loss": history.train_loss,
        "val_loss": history.val_loss,
    }
    if "test" in splits and splits["test"]:
        mse_d, mse_phi = evaluate_mse(model, splits["test"])
        doc["test_mse_d_m2"] = mse_d
        doc["test_mse_phi_rad2"] = mse_phi
    side = sidecar_path(target)
    _atomic_write_text(side, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {target} (best epoch {history.best_epoch}, "
          f"val loss {min(history.val_loss):.6g}) and {side}")
    return 0


def _cmd_leakmap(args) -> int:
    cfg = _load_config(args.config)
    scenario = _scenario(cfg)
    table = _table(cfg, "leakmap")
    d = _pick(args.d, table, ["d_m"], None)
    phi = _pick(args.phi, table, ["phi_rad"], None)
    if d is None or phi is None:
        raise UsageError("--d and --phi (the focal point) are required")
    ue = UeLocation(float(d), float(phi))
    t_lo = float(_pick(args.theta_min, table, ["theta_min_rad"], 0.0))
    t_hi = float(_pick(args.theta_max, table, ["theta_max_rad"], math.pi))
    n = int(_pick(args.n_theta, table, ["n_theta"], 721))
    if not (0.0 <= t_lo < t_hi <= math.pi) or n < 2:
        raise UsageError("need 0 <= theta_min < theta_max <= pi and at "
                         "least 2 points")
    which = str(_pick(args.backend, table, ["backend"], "both")).lower()
    if which not in ("both", *_BACKENDS):
        raise UsageError(f"unknown backend '{which}'")
    names = list(_BACKENDS) if which == "both" else [which]

    theta = np.linspace(t_lo, t_hi, n)
    profiles = {name: gain_profile(_BACKENDS[name], scenario.geom, ue, theta)
                for name in names}
    buf = io.StringIO()
    buf.write("theta_rad," + ",".join(f"gain_{n}" for n in names) + "\n")
    for i in range(n):
        vals = ",".join(repr(float(profiles[name][i])) for name in names)
        buf.write(f"{float(theta[i])!r},{vals}\n")
    out = _out_path(args)
    if out.suffix != ".csv":
        out = out.with_suffix(out.suffix + ".csv")
    _atomic_write_text(out, buf.getvalue())
    side = sidecar_path(out)
    _atomic_write_text(side, json.dumps({
        "tool": "leakmap",
        "version": __version__,
        "scenario": scenario_to_config(scenario),
        "d_m": ue.distance_m,
        "phi_rad": ue.azimuth_rad,
        "theta_min_rad": t_lo,
        "theta_max_rad": t_hi,
        "n_theta": n,
        "backend": which,
    }, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} ({n} angles) and {side}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="leakloc",
                     description="Near-field leakage localization toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config or an emitted JSON "
                                        "sidecar")
        p.add_argument("--out", help="output path (extension added)")
        p.add_argument("--seed", type=int, help="master seed override")

    def sweep_axes(p: argparse.ArgumentParser) -> None:
        p.add_argument("--K", dest="k_list", nargs="+",
                       help="sensor counts, e.g. 20,40")
        p.add_argument("--L", dest="l_list", nargs="+",
                       help="snapshot counts, e.g. 1,50")
        p.add_argument("--sigma2", nargs="+",
                       help="noise powers in dBm, e.g. --sigma2=-65,-85")
        p.add_argument("--prior-samples", type=int,
                       help="prior draws per geometry")
        p.add_argument("--backend", help="leakage backend")

    p = sub.add_parser("bcrlb", help="bound sweep over (K, L, sigma2)")
    common(p)
    sweep_axes(p)
    p.add_argument("--geometries", type=int,
                   help="sensor-geometry realizations")
    p.set_defaults(func=_cmd_bcrlb)

    p = sub.add_parser("estimate", help="grid search on a measurement file")
    common(p)
    p.add_argument("--measurements", help="CSV with sensor_id, d_k_m, "
                                          "theta_k_rad, z_mean")
    p.add_argument("--grid-d", type=int, help="distance grid points")
    p.add_argument("--grid-phi", type=int, help="azimuth grid points")
    p.add_argument("--backend", help="leakage backend")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("dataset", help="generate labeled observation sets")
    common(p)
    p.add_argument("--K", dest="k_list", nargs="+", help="sensor count")
    p.add_argument("--train", type=int, help="training samples")
    p.add_argument("--val", type=int, help="validation samples")
    p.add_argument("--test", type=int, help="test samples")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="fit the set regressor on a dataset")
    common(p)
    p.add_argument("--dataset", help="dataset CSV from the dataset command")
    p.add_argument("--width", type=int, help="latent width")
    p.add_argument("--single-head", action="store_true",
                   help="one shared decoder instead of per-target heads")
    p.add_argument("--epochs", type=int, help="epoch cap")
    p.add_argument("--patience", type=int, help="early-stopping patience")
    p.add_argument("--batch", type=int, help="minibatch size")
    p.add_argument("--lr", type=float, help="learning rate")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="estimator MSE sweep against bounds")
    common(p)
    sweep_axes(p)
    p.add_argument("--methods", nargs="+",
                   help="estimators: grid_search, deepsets")
    p.add_argument("--trials", type=int, help="trials per replication")
    p.add_argument("--sensor-sets", type=int,
                   help="independent sensor-set replications")
    p.add_argument("--grid-d", type=int, help="distance grid points")
    p.add_argument("--grid-phi", type=int, help="azimuth grid points")
    p.add_argument("--train-samples", type=int,
                   help="regressor training samples per cell")
    p.add_argument("--val-samples", type=int,
                   help="regressor validation samples per cell")
    p.add_argument("--width", type=int, help="regressor latent width")
    p.add_argument("--epochs", type=int, help="regressor epoch cap")
    p.add_argument("--patience", type=int, help="regressor patience")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("leakmap", help="export gain-versus-angle slices")
    common(p)
    p.add_argument("--d", type=float, help="focal distance in meters")
    p.add_argument("--phi", type=float, help="focal azimuth in radians")
    p.add_argument("--theta-min", type=float, help="first observer angle")
    p.add_argument("--theta-max", type=float, help="last observer angle")
    p.add_argument("--n-theta", type=int, help="number of angles")
    p.add_argument("--backend", help="exact, fresnel, or both")
    p.set_defaults(func=_cmd_leakmap)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TrainingDiverged, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
