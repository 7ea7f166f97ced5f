"""Command-line experiment driver.

Configuration files hold ``section.key = value`` lines (``#`` comments).
Command-line flags override file values. Exit status is 0 on success, 1 for
invalid input and 2 for failures during a run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import autocorrelation, convergence_scan, door_target_power, tracking_error
from .model import NOMINAL, ApplianceModel
from .signals import BUILTIN_SIGNALS, SignalFormatError, constant_signal, load_signal
from .simulator import FleetConfig, SimConfig, build_fleet, run_simulation

log = logging.getLogger("tclfleet")

TRACE_COLUMNS = ("time_s", "aggregate_w", "target_w", "error_w_per_device", "mean_z", "n_on")
ANALYSES = ("tracking", "acf", "convergence", "doors")
MODEL_ERROR_FLAGS = {"known": "known", "common": "common_nominal", "random": "randomized"}

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


# key -> (type, default)
_SCHEMA = {
    "fleet.n_devices": (int, 1000),
    "fleet.hetero_lo": (float, 0.8),
    "fleet.hetero_hi": (float, 1.2),
    "fleet.w": (float, 0.9),
    "fleet.model_error": (str, "known"),
    "fleet.seed": (int, 0),
    "nominal.alpha": (float, NOMINAL.alpha),
    "nominal.p_on": (float, NOMINAL.p_on),
    "nominal.t_off": (float, NOMINAL.t_off),
    "nominal.t_on": (float, NOMINAL.t_on),
    "nominal.t_min": (float, NOMINAL.t_min),
    "nominal.t_max": (float, NOMINAL.t_max),
    "sim.step_s": (float, 10.0),
    "sim.horizon_s": (float, 5 * 3600.0),
    "sim.skip_probability": (float, 0.0),
    "sim.door_rate_per_day": (float, 0.0),
    "sim.door_profile": (str, ""),
    "sim.door_duration_s": (float, 20.0),
    "sim.door_alpha_factor": (float, 25.0),
    "sim.parallel": (bool, False),
    "signal.path": (str, ""),
    "signal.builtin": (str, ""),
    "output.dir": (str, "out"),
    "analyses.list": (str, "tracking"),
    "acf.max_lag": (int, 360),
    "convergence.n_list": (str, "1000,10000"),
    "convergence.repetitions": (int, 1),
}


def _coerce(key, raw):
    typ = _SCHEMA[key][0]
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


@dataclass
class ExperimentConfig:
    fleet: FleetConfig
    sim: SimConfig
    signal_source: str
    output_dir: Path
    analyses: list[str]
    acf_max_lag: int = 360
    convergence_n: list[int] = field(default_factory=list)
    convergence_reps: int = 1
    resolved: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        # the output location does not affect results
        settings = {k: v for k, v in self.resolved.items() if k != "output.dir"}
        blob = json.dumps(settings, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def resolve_config(values: dict) -> ExperimentConfig:
    v = {k: d for k, (_, d) in _SCHEMA.items()}
    v.update(values)
    if bool(v["signal.path"]) == bool(v["signal.builtin"]):
        raise ConfigError("exactly one of signal.path and signal.builtin must be set")
    if v["signal.builtin"] and v["signal.builtin"] not in BUILTIN_SIGNALS:
        raise ConfigError(f"unknown builtin signal {v['signal.builtin']!r}; "
                          f"choose from {sorted(BUILTIN_SIGNALS)}")
    mode = MODEL_ERROR_FLAGS.get(v["fleet.model_error"], v["fleet.model_error"])
    analyses = [a.strip() for a in v["analyses.list"].split(",") if a.strip()]
    unknown = set(analyses) - set(ANALYSES)
    if unknown:
        raise ConfigError(f"unknown analyses {sorted(unknown)}; choose from {ANALYSES}")

    profile = None
    if v["sim.door_profile"]:
        try:
            profile = tuple(float(x) for x in v["sim.door_profile"].split(","))
        except ValueError:
            raise ConfigError("sim.door_profile must be comma-separated openings per hour") from None
    elif v["sim.door_rate_per_day"] > 0:
        profile = (v["sim.door_rate_per_day"] / 24.0,) * 24
    if "doors" in analyses and profile is None:
        raise ConfigError("the doors analysis needs a door profile or door_rate_per_day")

    try:
        nominal = ApplianceModel(**{f: v[f"nominal.{f}"] for f in
                                    ("alpha", "p_on", "t_off", "t_on", "t_min", "t_max")})
        fleet = FleetConfig(
            n_devices=v["fleet.n_devices"], nominal=nominal,
            hetero_range=(v["fleet.hetero_lo"], v["fleet.hetero_hi"]), w=v["fleet.w"],
            model_error_mode=mode, master_seed=v["fleet.seed"],
        )
        sim = SimConfig(
            step_s=v["sim.step_s"], horizon_s=v["sim.horizon_s"],
            skip_probability=v["sim.skip_probability"], door_profile=profile,
            door_duration_s=v["sim.door_duration_s"], door_alpha_factor=v["sim.door_alpha_factor"],
            parallel=v["sim.parallel"],
        )
        sim.n_ticks
        n_list = [int(x) for x in v["convergence.n_list"].split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    source = v["signal.path"] or f"builtin:{v['signal.builtin']}"
    return ExperimentConfig(
        fleet=fleet, sim=sim, signal_source=source, output_dir=Path(v["output.dir"]),
        analyses=analyses, acf_max_lag=v["acf.max_lag"], convergence_n=n_list,
        convergence_reps=v["convergence.repetitions"], resolved=v,
    )


def _get_signal(source: str):
    if source.startswith("builtin:"):
        return BUILTIN_SIGNALS[source.split(":", 1)[1]]()
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"signal file not found: {path}")
    return load_signal(path)


def _header(exp: ExperimentConfig, extra: dict) -> str:
    fields = {
        "tclfleet": __version__,
        "config_sha256": exp.config_hash,
        "master_seed": exp.fleet.master_seed,
        **extra,
    }
    return "# " + " ".join(f"{k}={v}" for k, v in fields.items())


def _write_table(path: Path, header: str, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
                              for x in row) + "\n")


def write_trace(path: Path, header: str, trace, target=None) -> None:
    target = trace.target_power if target is None else target
    err = (trace.aggregate_power - target) / trace.n_devices
    _write_table(path, header, TRACE_COLUMNS,
                 zip(trace.times, trace.aggregate_power, target, err, trace.mean_z, trace.n_on))


def read_trace(path) -> tuple[dict, dict]:
    """Return (metadata from the ``#`` header, columns as arrays)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"trace file not found: {path}")
    meta, header, rows = {}, None, []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, val = tok.split("=", 1)
                    meta[k] = val
            continue
        if not line.strip():
            continue
        if header is None:
            header = [c.strip() for c in line.split(",")]
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-numeric field") from None
    if header is None:
        raise ConfigError(f"{path}: no column header")
    data = np.asarray(rows, dtype=float).reshape(-1, len(header))
    return meta, {c: data[:, j] for j, c in enumerate(header)}


def _require(columns: dict, names, path) -> None:
    for name in names:
        if name not in columns:
            raise ConfigError(f"{path}: missing column {name!r}")


def write_acf(path: Path, header: str, series, max_lag: int) -> None:
    ac = autocorrelation(series, max_lag)
    _write_table(path, header + f" band={ac.band!r}", ("lag", "acf", "significant"),
                 zip(ac.lags, ac.acf, ac.significant.astype(int)))


def cmd_run(exp: ExperimentConfig) -> dict:
    signal = _get_signal(exp.signal_source)
    out = exp.output_dir
    out.mkdir(parents=True, exist_ok=True)
    fleet = build_fleet(exp.fleet)
    trace = run_simulation(fleet, signal, exp.sim)
    meta = {"n_devices": fleet.n_devices, "sum_p0": repr(fleet.sum_p0), "step_s": exp.sim.step_s}
    header = _header(exp, meta)

    target = None
    summary = {
        "version": __version__, "config_sha256": exp.config_hash,
        "master_seed": exp.fleet.master_seed, "n_devices": fleet.n_devices,
        "sum_p0_w": fleet.sum_p0, "runtime_s": trace.runtime_s, "counts": trace.counts,
    }
    if "doors" in exp.analyses:
        # empirical baseline: uncontrolled twin with the same devices and doors
        base_sim = replace(exp.sim, controlled=False)
        base_trace = run_simulation(fleet, constant_signal(1.0, exp.sim.horizon_s), base_sim)
        target = door_target_power(base_trace.aggregate_power, trace.reference, fleet.sum_p0)
        summary["baseline_mean_w_per_device"] = float(np.mean(base_trace.aggregate_power)) / fleet.n_devices
        summary["door_baseline_increase"] = (
            float(np.mean(base_trace.aggregate_power)) / fleet.sum_p0 - 1.0
        )
    write_trace(out / "trace.csv", header, trace, target)
    err = tracking_error(trace, target=target)
    _write_table(out / "error.csv", header, ("time_s", "error_w_per_device"),
                 zip(err.times, err.error_w_per_device))
    summary["std_w_per_device"] = err.std_w_per_device
    summary["mean_error_w_per_device"] = float(np.mean(err.error_w_per_device))
    summary["max_abs_error_w_per_device"] = float(np.max(np.abs(err.error_w_per_device)))

    if "acf" in exp.analyses:
        write_acf(out / "acf.csv", header, err.error_w_per_device, exp.acf_max_lag)
    if "convergence" in exp.analyses:
        table = convergence_scan(exp.convergence_n, exp.convergence_reps, exp.fleet, signal, exp.sim)
        slope = "nan" if table.slope is None else repr(table.slope)
        _write_table(out / "convergence.csv", header + f" slope={slope}",
                     ("n_devices", "std_w_per_device", "std_spread"), table.rows())
        summary["convergence_slope"] = table.slope
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_analyze(trace_paths, analyses, out_dir, max_lag: int = 360) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loaded = [(p, *read_trace(p)) for p in trace_paths]
    for path, meta, cols in loaded:
        _require(cols, ("time_s", "aggregate_w", "target_w"), path)
        if "n_devices" not in meta:
            raise ConfigError(f"{path}: header lacks n_devices")
    stem = lambda p: Path(p).stem  # noqa: E731
    for path, meta, cols in loaded:
        n = int(meta["n_devices"])
        err = (cols["aggregate_w"] - cols["target_w"]) / n
        header = "# " + " ".join(f"{k}={v}" for k, v in meta.items()) + f" source={Path(path).name}"
        if "tracking" in analyses:
            _write_table(out / f"{stem(path)}_error.csv", header,
                         ("time_s", "error_w_per_device"), zip(cols["time_s"], err))
        if "acf" in analyses:
            write_acf(out / f"{stem(path)}_acf.csv", header, err, max_lag)
    if "convergence" in analyses:
        from .analysis import loglog_slope

        ns, stds = [], []
        for path, meta, cols in loaded:
            n = int(meta["n_devices"])
            ns.append(n)
            stds.append(float(np.std((cols["aggregate_w"] - cols["target_w"]) / n)))
        order = np.argsort(ns)
        slope = loglog_slope(np.asarray(ns)[order], np.asarray(stds)[order])
        _write_table(out / "convergence.csv",
                     f"# slope={'nan' if slope is None else repr(slope)}",
                     ("n_devices", "std_w_per_device"),
                     ((ns[i], stds[i]) for i in order))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tclfleet", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a fleet and write traces")
    run.add_argument("--config", type=Path)
    run.add_argument("--signal", help="signal file path or builtin:<name>")
    run.add_argument("--devices", type=int)
    run.add_argument("--step-s", type=float)
    run.add_argument("--horizon-s", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path)
    run.add_argument("--skip-prob", type=float)
    run.add_argument("--door-rate-per-day", type=float)
    run.add_argument("--model-error", choices=sorted(MODEL_ERROR_FLAGS))
    run.add_argument("--analyses", help=f"comma-separated subset of {','.join(ANALYSES)}")

    ana = sub.add_parser("analyze", help="analyse written trace files")
    ana.add_argument("traces", nargs="+", type=Path)
    ana.add_argument("--analyses", default="tracking,acf")
    ana.add_argument("--max-lag", type=int, default=360)
    ana.add_argument("--out", type=Path, default=Path("analysis"))
    return parser


_FLAG_KEYS = {
    "devices": "fleet.n_devices", "step_s": "sim.step_s", "horizon_s": "sim.horizon_s",
    "seed": "fleet.seed", "out": "output.dir", "skip_prob": "sim.skip_probability",
    "door_rate_per_day": "sim.door_rate_per_day", "model_error": "fleet.model_error",
    "analyses": "analyses.list",
}


def _run_values(args) -> dict:
    values = {}
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        values = parse_config_text(args.config.read_text(), str(args.config))
    for attr, key in _FLAG_KEYS.items():
        val = getattr(args, attr)
        if val is not None:
            values[key] = _coerce(key, str(val) if attr == "out" else val)
    if args.signal is not None:
        values.pop("signal.path", None)
        values.pop("signal.builtin", None)
        if args.signal.startswith("builtin:"):
            values["signal.builtin"] = args.signal.split(":", 1)[1]
        else:
            values["signal.path"] = args.signal
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            exp = resolve_config(_run_values(args))
            _get_signal(exp.signal_source)
            try:
                summary = cmd_run(exp)
            except (ConfigError, SignalFormatError):
                raise
            except Exception as exc:
                log.error("run failed: %s", exc)
                return EXIT_RUNTIME
            log.info("wrote %s (std %.4f W/device)", exp.output_dir, summary["std_w_per_device"])
        else:
            analyses = [a.strip() for a in args.analyses.split(",") if a.strip()]
            bad = set(analyses) - {"tracking", "acf", "convergence"}
            if bad:
                raise ConfigError(f"unknown analyses {sorted(bad)}")
            try:
                cmd_analyze(args.traces, analyses, args.out, args.max_lag)
            except (ConfigError, SignalFormatError):
                raise
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    except (ConfigError, SignalFormatError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
