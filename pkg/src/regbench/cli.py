"""Command-line entry point: reproducible runs from a single JSON config.

Commands: synth, ingest, stats, climatology, rollout, evaluate, sample,
extreme. Every run resolves one JSON config (flags are overrides of config
keys via ``--set key=value``), writes its artifacts into a fresh
timestamped subdirectory of ``output_dir`` (or ``output_dir/<command>``
with ``--force``), and drops the resolved config plus engine version there,
so any artifact directory re-runs to the same results.

Exit codes: 0 ok, 1 runtime failure, 2 config validation failure. The
REGBENCH_WORKERS environment variable sets the default worker count.
"""

from __future__ import annotations

import argparse
import copy
import datetime as dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (
    fit_climatology,
    load_climatology,
    save_climatology,
)
from .conditioning import MODE_BOUNDARY, MODE_COARSE, BoundarySpec
from .dataset import (
    SyntheticConfig,
    coarse_companion,
    build_splits,
    compute_normalization_stats,
    generate_synthetic_dataset,
    load_manifest,
    save_manifest,
)
from .edm import NoiseSchedule, generate_ensemble, DENOISERS
from .engine import rollout, serve_builtin
from .errors import ConfigError, RegbenchError
from .frameio import write_frame
from .grid import STEP_HOURS
from .verification import (
    CENTRAL_INDIA_BOX,
    EnsembleForecast,
    RegionBox,
    evaluate_ensembles,
    evaluate_run,
    event_series,
)
from .wire import ExternalAdapter, ExternalDenoiser, SubprocessTransport, TcpTransport

COMMANDS = (
    "synth",
    "ingest",
    "stats",
    "climatology",
    "rollout",
    "evaluate",
    "sample",
    "extreme",
)


def _parse_time(text: str) -> dt.datetime:
    return dt.datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=dt.timezone.utc)


def _set_by_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_config(path: str, overrides: list[str]) -> dict:
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_by_path(config, key, value)
    return config


def _require(config: dict, key: str):
    if key not in config:
        raise ConfigError(f"config key {key!r} is required for this command")
    return config[key]


def _workers(config: dict) -> int:
    if config.get("workers") is not None:
        return int(config["workers"])
    return int(os.environ.get("REGBENCH_WORKERS", "1"))


def make_run_dir(config: dict, command: str, force: bool) -> Path:
    base = Path(config.get("output_dir", "runs"))
    if force:
        run_dir = base / command
        run_dir.mkdir(parents=True, exist_ok=True)
        return run_dir
    stamp = dt.datetime.now(dt.timezone.utc).strftime("%Y%m%dT%H%M%S.%f")
    run_dir = base / f"{command}-{stamp}"
    n = 1
    while run_dir.exists():
        n += 1
        run_dir = base / f"{command}-{stamp}-{n}"
    run_dir.mkdir(parents=True)
    return run_dir


def write_resolved_config(run_dir: Path, config: dict, command: str) -> None:
    doc = copy.deepcopy(config)
    doc["command"] = command
    doc["engine_version"] = __version__
    (run_dir / "config.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8"
    )


def boundary_spec(config: dict) -> BoundarySpec:
    b = config.get("boundary", {})
    mode = b.get("mode", MODE_BOUNDARY)
    return BoundarySpec(
        mode=mode,
        halo_width=int(b.get("halo_width", 10 if mode == MODE_BOUNDARY else 0)),
        coarse_manifest_path=b.get("coarse_manifest"),
        allow_full_overwrite=bool(b.get("allow_full_overwrite", False)),
    )


def noise_schedule(config: dict) -> NoiseSchedule:
    s = config.get("schedule", {})
    fields = {
        "sigma_max",
        "sigma_min",
        "rho",
        "num_levels",
        "churn_rate",
        "churn_min",
        "churn_max",
        "noise_inflation",
        "ensemble_size",
    }
    unknown = set(s) - fields - {"sampler"}
    if unknown:
        raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
    return NoiseSchedule(**{k: v for k, v in s.items() if k in fields})


def build_adapter(config: dict, manifest, climatology=None):
    spec = config.get("adapter", {"type": "builtin", "name": "persistence"})
    kind = spec.get("type", "builtin")
    if kind == "builtin":
        return serve_builtin(
            spec.get("name", "persistence"),
            climatology=climatology,
            manifest=manifest,
            alpha=float(spec.get("alpha", 0.1)),
        )
    timeout = float(spec.get("timeout", 120.0))
    conditioning = config.get("boundary", {}).get("mode", MODE_BOUNDARY)
    if kind == "subprocess":
        transport = SubprocessTransport(list(spec["command"]))
    elif kind == "tcp":
        transport = TcpTransport(spec["host"], int(spec["port"]), connect_timeout=timeout)
    else:
        raise ConfigError(f"unknown adapter type {kind!r}")
    return ExternalAdapter(
        transport,
        manifest.catalog,
        manifest.geometry,
        history_len=int(spec.get("history", 0)),
        conditioning=conditioning,
        timeout=timeout,
    )


def build_denoiser(config: dict, manifest):
    spec = _require(config, "denoiser")
    kind = spec.get("type")
    if kind == "constant":
        return DENOISERS["constant"](float(spec["value"]))
    if kind == "gaussian":
        return DENOISERS["gaussian"](float(spec["mu"]), float(spec["s"]))
    timeout = float(spec.get("timeout", 120.0))
    if kind == "subprocess":
        transport = SubprocessTransport(list(spec["command"]))
    elif kind == "tcp":
        transport = TcpTransport(spec["host"], int(spec["port"]), connect_timeout=timeout)
    else:
        raise ConfigError(f"unknown denoiser type {kind!r}")
    return ExternalDenoiser(transport, manifest.catalog, manifest.geometry, timeout=timeout)


def _load_manifest(config: dict, key: str = "manifest"):
    path = Path(_require(config, key))
    if not path.exists():
        raise ConfigError(f"{key} {path} does not exist")
    return load_manifest(path)


def _init_times(config: dict, manifest, split: str, leads: int) -> list[dt.datetime]:
    if config.get("init_times"):
        return [_parse_time(t) for t in config["init_times"]]
    refs = manifest.frames(split)
    if not refs:
        raise ConfigError(f"split {split!r} is empty")
    stride = int(config.get("init_stride", 1))
    horizon = dt.timedelta(hours=STEP_HOURS * leads)
    last = refs[-1].time
    inits = [r.time for r in refs[::stride] if r.time + horizon <= last]
    cap = config.get("max_inits")
    if cap is not None:
        inits = inits[: int(cap)]
    if not inits:
        raise ConfigError("no initialization times fit the requested lead range")
    return inits


def _make_trajectories(config: dict, manifest, clim):
    spec = boundary_spec(config)
    coarse = None
    if spec.mode == MODE_COARSE:
        if not spec.coarse_manifest_path:
            raise ConfigError("coarse conditioning requires boundary.coarse_manifest")
        coarse_path = Path(spec.coarse_manifest_path)
        if not coarse_path.exists():
            raise ConfigError(f"coarse manifest {coarse_path} does not exist")
        coarse = load_manifest(coarse_path)
    adapter = build_adapter(config, manifest, climatology=clim)
    leads = int(config.get("leads", 20))
    split = config.get("split", "test")
    inits = _init_times(config, manifest, split, leads)
    trajectories = [
        rollout(adapter, manifest, t, leads, spec, coarse_manifest=coarse) for t in inits
    ]
    if hasattr(adapter, "close"):
        adapter.close()
    return trajectories, spec


def _maybe_climatology(config: dict):
    path = config.get("climatology")
    if not path:
        return None
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"climatology directory {p} does not exist")
    return load_climatology(p)


# -- command implementations ---------------------------------------------------


def cmd_synth(config: dict, run_dir: Path) -> None:
    syn = config.get("synthetic", {})
    unknown = set(syn) - {f.name for f in SyntheticConfig.__dataclass_fields__.values()}
    if unknown:
        raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}")
    if "seed" not in syn and "seed" in config:
        syn = {**syn, "seed": config["seed"]}
    dataset_dir = Path(config.get("dataset_dir") or run_dir / "dataset")
    split_years = None
    if config.get("split_years"):
        split_years = {k: tuple(v) for k, v in config["split_years"].items()}
    manifest = generate_synthetic_dataset(SyntheticConfig(**syn), dataset_dir, split_years)
    counts = {name: len(refs) for name, refs in manifest.splits.items()}
    if config.get("coarse_factor"):
        coarse_dir = Path(config.get("coarse_dir") or run_dir / "coarse")
        coarse_companion(manifest, int(config["coarse_factor"]), coarse_dir)
        counts["coarse_factor"] = int(config["coarse_factor"])
    (run_dir / "summary.json").write_text(json.dumps(counts, indent=1), encoding="utf-8")
    print(f"synth: wrote dataset to {dataset_dir} ({counts})")


def cmd_ingest(config: dict, run_dir: Path) -> None:
    raw_dir = Path(_require(config, "raw_dir"))
    if not raw_dir.exists():
        raise ConfigError(f"raw_dir {raw_dir} does not exist")
    meta = json.loads(Path(_require(config, "raw_meta")).read_text(encoding="utf-8"))
    from .grid import Channel, FieldFrame, GridGeometry, VariableCatalog

    catalog = VariableCatalog(
        tuple(Channel(c["name"], c["level"], c["units"]) for c in meta["catalog"])
    )
    lat = np.asarray(meta["lat"], dtype=np.float64)
    res = float(abs(lat[1] - lat[0])) if lat.size > 1 else 1.0
    geometry = GridGeometry(lat, meta["lon"], res)
    dataset_dir = Path(config.get("dataset_dir") or run_dir / "dataset")
    frames_dir = dataset_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    refs = []
    for npy in sorted(raw_dir.glob("*.npy")):
        when = dt.datetime.strptime(npy.stem, "%Y-%m-%dT%H").replace(tzinfo=dt.timezone.utc)
        frame = FieldFrame(when, np.load(npy), catalog, geometry)
        rel = f"frames/{npy.stem}.rbf"
        write_frame(frame, dataset_dir / rel, dtype=config.get("dtype", "float32"))
        refs.append((rel, when))
    if not refs:
        raise ConfigError(f"no .npy files found under {raw_dir}")
    split_years = {k: tuple(v) for k, v in _require(config, "split_years").items()}
    manifest = build_splits(refs, split_years, catalog, geometry, root=dataset_dir)
    save_manifest(manifest, dataset_dir / "manifest.json")
    counts = {name: len(r) for name, r in manifest.splits.items()}
    print(f"ingest: wrote {sum(counts.values())} frames to {dataset_dir} ({counts})")


def cmd_stats(config: dict, run_dir: Path) -> None:
    manifest = _load_manifest(config)
    stats = compute_normalization_stats(manifest, config.get("fit_split", "train"))
    (run_dir / "stats.json").write_text(
        json.dumps(stats.to_json(), indent=1), encoding="utf-8"
    )
    print(f"stats: wrote per-channel normalization to {run_dir / 'stats.json'}")


def cmd_climatology(config: dict, run_dir: Path) -> None:
    manifest = _load_manifest(config)
    table = fit_climatology(manifest, config.get("fit_split", "train"))
    out = Path(config.get("climatology_dir") or run_dir / "climatology")
    save_climatology(table, out)
    print(f"climatology: fitted {len(table.means)} keys to {out}")


def cmd_rollout(config: dict, run_dir: Path) -> None:
    manifest = _load_manifest(config)
    clim = _maybe_climatology(config)
    trajectories, _ = _make_trajectories(config, manifest, clim)
    index = []
    for traj in trajectories:
        stamp = traj.init_time.strftime("%Y-%m-%dT%H")
        traj_dir = run_dir / "trajectories" / stamp
        traj_dir.mkdir(parents=True, exist_ok=True)
        for k in range(1, traj.leads + 1):
            write_frame(traj.at_lead(k), traj_dir / f"lead{k * STEP_HOURS:03d}h.rbf")
        index.append({"init": stamp, "leads": traj.leads})
    (run_dir / "trajectories" / "index.json").write_text(
        json.dumps(index, indent=1), encoding="utf-8"
    )
    print(f"rollout: wrote {len(trajectories)} trajectories under {run_dir / 'trajectories'}")


def cmd_evaluate(config: dict, run_dir: Path) -> None:
    manifest = _load_manifest(config)
    metrics = tuple(config.get("metrics", ["rmse", "acc"]))
    clim = _maybe_climatology(config)
    if "acc" in metrics and clim is None:
        raise ConfigError("metrics include 'acc' but no climatology directory is set")
    trajectories, spec = _make_trajectories(config, manifest, clim)
    report = evaluate_run(
        trajectories,
        manifest,
        metrics=metrics,
        mask_policy=config.get("mask_policy", "full"),
        climatology=clim,
        halo_width=spec.halo_width if spec.mode == MODE_BOUNDARY else 0,
        workers=_workers(config),
        run_id=config.get("run_id", run_dir.name),
    )
    (run_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (run_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=1), encoding="utf-8"
    )
    print(f"evaluate: wrote {len(report.rows)} rows to {run_dir / 'report.csv'}")


def cmd_sample(config: dict, run_dir: Path) -> None:
    if "seed" not in config:
        raise ConfigError("'sample' is stochastic: config must set a seed")
    manifest = _load_manifest(config)
    schedule = noise_schedule(config)
    sampler = config.get("schedule", {}).get("sampler", "dpmpp2s")
    denoiser = build_denoiser(config, manifest)
    split = config.get("split", "test")
    inits = _init_times(config, manifest, split, 1)
    seed = int(config["seed"])
    items = []
    step = dt.timedelta(hours=STEP_HOURS)
    shape = (len(manifest.catalog), *manifest.geometry.shape)
    for n, init in enumerate(inits):
        state = manifest.read_at(init)
        increments = generate_ensemble(
            denoiser, shape, schedule, base_seed=seed + n, sampler=sampler
        )
        members = state.values[None] + increments
        items.append(
            (init, 1, EnsembleForecast(init + step, members, manifest.catalog, manifest.geometry))
        )
    if hasattr(denoiser, "close"):
        denoiser.close()
    report = evaluate_ensembles(
        items,
        manifest,
        metrics=tuple(config.get("metrics", ["crps", "spread", "ssr"])),
        mask_policy=config.get("mask_policy", "full"),
        halo_width=int(config.get("boundary", {}).get("halo_width", 0)),
        workers=_workers(config),
        run_id=config.get("run_id", run_dir.name),
    )
    (run_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (run_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=1), encoding="utf-8"
    )
    print(f"sample: {schedule.ensemble_size}-member ensembles at {len(inits)} inits")


def cmd_extreme(config: dict, run_dir: Path) -> None:
    manifest = _load_manifest(config)
    event = _require(config, "event")
    start = _parse_time(event["start"])
    end = _parse_time(event["end"])
    hour = int(event.get("hour", 12))
    if event.get("box"):
        b = event["box"]
        box = RegionBox(b["lat_min"], b["lat_max"], b["lon_min"], b["lon_max"], b.get("label", ""))
    else:
        box = CENTRAL_INDIA_BOX
    clim = _maybe_climatology(config)
    leads = int(np.ceil((end - start).total_seconds() / 3600 / STEP_HOURS))
    cfg = dict(config)
    cfg["leads"] = max(leads, 1)
    cfg["init_times"] = [start.strftime("%Y-%m-%dT%H:%M:%SZ")]
    trajectories, _ = _make_trajectories(cfg, manifest, clim)
    series = event_series(trajectories[0], manifest, box, start, end, hour=hour)
    (run_dir / "event_series.csv").write_text(series.to_csv(), encoding="utf-8")
    print(f"extreme: {len(series.dates)} days over box {box.label or box} "
          f"to {run_dir / 'event_series.csv'}")


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "climatology": cmd_climatology,
    "rollout": cmd_rollout,
    "evaluate": cmd_evaluate,
    "sample": cmd_sample,
    "extreme": cmd_extreme,
}

_NEEDS_MANIFEST = ("stats", "climatology", "rollout", "evaluate", "sample", "extreme")


def validate(command: str, config: dict) -> None:
    """Reject bad configs before any artifact directory is created."""
    if command in _NEEDS_MANIFEST:
        path = Path(_require(config, "manifest"))
        if not path.exists():
            raise ConfigError(f"manifest {path} does not exist")
    if config.get("mask_policy", "full") not in ("full", "interior"):
        raise ConfigError(f"unknown mask_policy {config['mask_policy']!r}")
    if command in ("rollout", "evaluate", "sample", "extreme"):
        boundary_spec(config)
        kind = config.get("adapter", {}).get("type", "builtin")
        if kind not in ("builtin", "subprocess", "tcp"):
            raise ConfigError(f"unknown adapter type {kind!r}")
        clim = config.get("climatology")
        if clim and not Path(clim).exists():
            raise ConfigError(f"climatology directory {clim} does not exist")
    if command == "evaluate" and "acc" in config.get("metrics", ["rmse", "acc"]):
        if not config.get("climatology"):
            raise ConfigError("metrics include 'acc' but no climatology directory is set")
    if command == "sample":
        if "seed" not in config:
            raise ConfigError("'sample' is stochastic: config must set a seed")
        noise_schedule(config)
        kind = _require(config, "denoiser").get("type")
        if kind not in ("constant", "gaussian", "subprocess", "tcp"):
            raise ConfigError(f"unknown denoiser type {kind!r}")
    if command == "ingest":
        for key in ("raw_dir", "raw_meta"):
            if not Path(_require(config, key)).exists():
                raise ConfigError(f"{key} {config[key]} does not exist")
        _require(config, "split_years")
    if command == "extreme":
        event = _require(config, "event")
        for key in ("start", "end"):
            if key not in event:
                raise ConfigError(f"event config needs {key!r}")


def run(command: str, config: dict, force: bool = False) -> Path:
    """Execute one command; returns the artifact directory."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; choose from {COMMANDS}")
    validate(command, config)
    run_dir = make_run_dir(config, command, force)
    write_resolved_config(run_dir, config, command)
    HANDLERS[command](config, run_dir)
    return run_dir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="regbench",
        description="regional forecasting benchmark engine",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the run config JSON")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (dotted paths; values parsed as JSON)",
    )
    parser.add_argument("--out", help="override output_dir")
    parser.add_argument("--workers", type=int, help="override worker count")
    parser.add_argument(
        "--force", action="store_true", help="write into output_dir/<command> directly"
    )
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.overrides)
        if args.out:
            config["output_dir"] = args.out
        if args.workers is not None:
            config["workers"] = args.workers
        run(args.command, config, force=args.force)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RegbenchError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
