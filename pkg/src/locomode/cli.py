"""Command-line entry point tying the pipeline into reproducible runs.

Commands: synth, preprocess, train, eval, channel-drop, report. Every
command takes an optional JSON config file (--config) whose values are
overridden by flags; outputs are deterministic given identical config and
seed. Exit codes: 0 success, 2 config error, 3 data error, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .container import ContainerError, read_container, write_container
from .metrics import EvalReport
from .modes import CHANNEL_CONFIGS, LocomotionMode
from .preprocess import apply_normalization, condition_emg, default_emg_cascades, fit_channel_stats
from .recording import Trial, ValidationError, load_trial, save_trial
from .segmentation import WindowSpec, build_state_track, segment_trial
from .synth import SynthConfig, generate_dataset
from .training import TrainSettings, TrainingDiverged, channel_drop_run, run_experiment

logger = logging.getLogger("locomode")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

DEFAULT_P_LABELS = [100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0, 450.0, 500.0]

# Complete config schema with the standard defaults; a JSON config file may
# override any subset, and command-line flags override the file.
DEFAULT_CONFIG: dict = {
    "seed": 0,
    "dataset": None,
    "out": None,
    "synth": {
        "trials_per_task": 10,
        "noise_sd": 0.1,
        "snr_variability": 0.0,
        "gait_cycle_ms": 1100.0,
        "steps_per_mode": 4,
        "inject_hum": False,
    },
    "window": {"window_len": 1200, "stride": 60, "p_labels_ms": DEFAULT_P_LABELS},
    "train": {
        "lr": 0.001,
        "betas": [0.9, 0.99],
        "batch_size": 256,
        "max_epochs": 60,
        "plateau_factor": 0.5,
        "plateau_patience": 5,
        "plateau_min_delta": 1e-4,
        "early_stop_patience": 10,
        "step2_epochs": 50,
        "step2_lr": 0.001,
        "train_subsample": 1,
        "notch_enabled": True,
    },
    "channels": "ALL",
    "folds": None,
    "jobs": 1,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    config = DEFAULT_CONFIG
    if path:
        try:
            config = _merge(config, json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    return _merge(config, overrides)


def _out_dir(config: dict, fallback: str) -> Path:
    root = config.get("out") or os.environ.get("LOCOMODE_OUT") or fallback
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(config: dict) -> dict[str, Trial]:
    dataset = config.get("dataset")
    if not dataset:
        raise ConfigError("no dataset directory given (--data or config 'dataset')")
    trial_dir = Path(dataset)
    files = sorted(trial_dir.glob("*.trial"))
    if not files:
        raise ValidationError(f"no .trial files under {trial_dir}")
    return {t.trial_id: t for t in (load_trial(f) for f in files)}


def _settings_from(config: dict) -> TrainSettings:
    t = config["train"]
    kwargs = {f.name: t[f.name] for f in fields(TrainSettings) if f.name in t}
    kwargs["betas"] = tuple(t["betas"])
    kwargs["seed"] = config["seed"]
    return TrainSettings(**kwargs)


# --- commands -----------------------------------------------------------


def cmd_synth(config: dict) -> int:
    out = _out_dir(config, "synth_out")
    (out / "trials").mkdir(exist_ok=True)
    s = config["synth"]
    synth_config = SynthConfig(
        seed=config["seed"],
        gait_cycle_ms=s["gait_cycle_ms"],
        steps_per_mode=s["steps_per_mode"],
        noise_sd=s["noise_sd"],
        snr_variability=s["snr_variability"],
        inject_hum=s["inject_hum"],
    )
    trials = generate_dataset(synth_config, s["trials_per_task"])
    manifest = {"seed": config["seed"], "trials_per_task": s["trials_per_task"], "trials": {}}
    spec = WindowSpec(config["window"]["window_len"], config["window"]["stride"],
                      int(round(config["window"]["p_labels_ms"][0] * 1.2)))
    mode_counts = {m.name: 0 for m in LocomotionMode}
    for trial in trials:
        save_trial(trial, out / "trials" / f"{trial.trial_id}.trial")
        manifest["trials"][trial.trial_id] = {
            "seed": trial.meta["seed"],
            "task": trial.trial_id.rsplit("-", 1)[0],
            "n_samples": trial.emg.n_samples,
        }
        track = build_state_track(trial.annotation, trial.transitions)
        ws = segment_trial(trial, trial.emg.samples, spec, track)
        for label in ws.labels:
            mode_counts[LocomotionMode(int(label)).name] += 1
    manifest["window_counts_per_mode"] = mode_counts
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    print(f"wrote {len(trials)} trials to {out / 'trials'}")
    print("window counts per mode:", json.dumps(mode_counts, sort_keys=True))
    return EXIT_OK


def window_cache_path(out: Path, trial_id: str, spec: WindowSpec, notch: bool) -> Path:
    key = hashlib.sha256(f"{spec.key()}_notch{notch}".encode()).hexdigest()[:12]
    return out / f"{trial_id}_{key}.bin"


def cmd_preprocess(config: dict) -> int:
    trials = _load_dataset(config)
    out = _out_dir(config, "preprocess_out")
    notch = config["train"]["notch_enabled"]
    cascades = default_emg_cascades(notch_enabled=notch)
    (out / "filters.txt").write_text("\n".join(c.coefficient_text() for c in cascades))
    p_label = int(round(config["window"]["p_labels_ms"][0] * 1.2))
    spec = WindowSpec(config["window"]["window_len"], config["window"]["stride"], p_label)
    hits = misses = 0
    for trial_id, trial in sorted(trials.items()):
        path = window_cache_path(out, trial_id, spec, notch)
        if path.exists():
            hits += 1
            logger.info("cache hit for %s (%s)", trial_id, path.name)
            continue
        misses += 1
        conditioned = condition_emg(trial.emg.samples, cascades)
        track = build_state_track(trial.annotation, trial.transitions)
        ws = segment_trial(trial, conditioned, spec, track)
        write_container(path, {"kind": "window_cache", "trial_id": trial_id,
                               "spec": asdict(spec), "notch_enabled": notch},
                        {"conditioned": conditioned,
                         "ends": ws.ends.astype(np.float32),
                         "labels": ws.labels.astype(np.float32),
                         "span_index": ws.span_index.astype(np.float32)})
    print(f"preprocessed {misses} trials ({hits} cache hits) -> {out}")
    return EXIT_OK


def cmd_train(config: dict) -> int:
    trials = _load_dataset(config)
    out = _out_dir(config, "train_out")
    settings = _settings_from(config)
    manifest = run_experiment(
        trials,
        p_labels_ms=config["window"]["p_labels_ms"],
        settings=settings,
        out_dir=out,
        window_len=config["window"]["window_len"],
        stride=config["window"]["stride"],
        folds=config["folds"],
        channel_config=config["channels"],
        jobs=config["jobs"],
    )
    failures = [c for c in manifest["cells"] if c["error"]]
    print(f"trained {len(manifest['cells']) - len(failures)} cells "
          f"({len(failures)} failed) -> {out}")
    if any("Diverged" in (c["error"] or "") for c in manifest["cells"]):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_eval(config: dict) -> int:
    run_dir = Path(config.get("dataset") or config.get("out") or ".")
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no manifest.json under {run_dir}; run 'train' first")
    manifest = json.loads(manifest_path.read_text())
    cells = [c for c in manifest["cells"] if c["error"] is None]
    if not cells:
        raise ValidationError("manifest holds no successful cells")
    for cell in cells:
        if not (run_dir / cell["report"]).exists():
            raise ValidationError(f"missing report {cell['report']}")

    by_p: dict[float, list[dict]] = {}
    for cell in cells:
        by_p.setdefault(cell["p_label_ms"], []).append(cell["metrics"])

    acc_lines = ["p_label_ms,acc_ss_mean,acc_ss_sd,acc_ts_mean,acc_ts_sd,acc_overall_mean,acc_overall_sd"]
    ps_lines = ["p_label_ms,p_stable_mean_ms,p_stable_sd_ms,predict_rate_mean,predict_rate_sd"]
    for p in sorted(by_p):
        rows = by_p[p]
        def stat(key):
            vals = [r[key] for r in rows if r[key] is not None]
            return (float(np.mean(vals)), float(np.std(vals))) if vals else (float("nan"),) * 2
        ss, ts, ov = stat("acc_ss"), stat("acc_ts"), stat("acc_overall")
        pr, pm = stat("predict_rate"), stat("p_stable_mean_ms")
        acc_lines.append(f"{p},{ss[0]:.6f},{ss[1]:.6f},{ts[0]:.6f},{ts[1]:.6f},{ov[0]:.6f},{ov[1]:.6f}")
        ps_lines.append(f"{p},{pm[0]:.3f},{pm[1]:.3f},{pr[0]:.6f},{pr[1]:.6f}")
    (run_dir / "reports" / "accuracy_vs_plabel.csv").write_text("\n".join(acc_lines) + "\n")
    (run_dir / "reports" / "p_stable_vs_plabel.csv").write_text("\n".join(ps_lines) + "\n")

    hist_lines = ["p_label_ms,fold,transition,p_stable_ms"]
    for cell in cells:
        report = EvalReport.load(run_dir / cell["report"])
        for kind, values in sorted(report.p_stable_values.items()):
            for v in values:
                hist_lines.append(f"{cell['p_label_ms']},{cell['fold']},{kind},{v:.3f}")
    (run_dir / "reports" / "p_stable_hist.csv").write_text("\n".join(hist_lines) + "\n")
    print(f"wrote evaluation CSVs under {run_dir / 'reports'}")
    return EXIT_OK


def cmd_channel_drop(config: dict) -> int:
    trials = _load_dataset(config)
    out = _out_dir(config, "channel_drop_out")
    names = config.get("configs") or list(CHANNEL_CONFIGS)
    unknown = [n for n in names if n not in CHANNEL_CONFIGS]
    if unknown:
        raise ConfigError(f"unknown channel configuration(s) {unknown}; "
                          f"valid: {sorted(CHANNEL_CONFIGS)}")
    settings = _settings_from(config)
    p_label_ms = config["window"]["p_labels_ms"][0]
    reports = channel_drop_run(trials, settings, p_label_ms=p_label_ms,
                               configs=names, stride=config["window"]["stride"])
    lines = ["config,n_muscles,muscles,acc_ss,acc_ts,acc_overall,predict_rate,p_stable_mean_ms"]
    for name, report in reports.items():
        report.save(out / f"{name}_report.json")
        muscles = CHANNEL_CONFIGS[name]
        p_stable = "" if report.p_stable_mean_ms is None else f"{report.p_stable_mean_ms:.1f}"
        lines.append(f"{name},{len(muscles)},{'|'.join(muscles)},{report.acc_ss:.4f},"
                     f"{report.acc_ts:.4f},{report.acc_overall:.4f},"
                     f"{report.predict_rate:.4f},{p_stable}")
    (out / "channel_drop.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(reports)} channel-drop reports -> {out}")
    return EXIT_OK


def cmd_report(config: dict) -> int:
    run_dir = Path(config.get("dataset") or ".")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    print(f"config hash: {manifest['config_hash']}")
    print("p_label_ms  fold  acc_ss  acc_ts  overall  rate  error")
    for cell in manifest["cells"]:
        if cell["error"]:
            print(f"{cell['p_label_ms']:>10} {cell['fold']:>5}  -       -       -        -     {cell['error']}")
        else:
            m = cell["metrics"]
            print(f"{cell['p_label_ms']:>10} {cell['fold']:>5}  {m['acc_ss']:.4f}  {m['acc_ts']:.4f}  "
                  f"{m['acc_overall']:.4f}   {m['predict_rate']:.2f}")
    return EXIT_OK


# --- argument plumbing ---------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory (or $LOCOMODE_OUT)")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locomode",
        description="Continuous locomotion-mode prediction from sEMG",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--trials", type=int, help="trials per task")
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--steps-per-mode", type=int)
    p.add_argument("--inject-hum", action="store_true", default=None)

    p = sub.add_parser("preprocess", help="condition trials and cache windows")
    _add_common(p)
    p.add_argument("--data", help="dataset directory of .trial files")
    p.add_argument("--p-label", type=float, nargs="+", help="advance times in ms")
    p.add_argument("--stride", type=int)
    p.add_argument("--no-notch", action="store_true")

    p = sub.add_parser("train", help="run the two-step training over folds")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--p-label", type=float, nargs="+")
    p.add_argument("--stride", type=int)
    p.add_argument("--folds", type=int, nargs="+")
    p.add_argument("--jobs", type=int)
    p.add_argument("--channels", choices=sorted(CHANNEL_CONFIGS))
    p.add_argument("--epochs", type=int, help="max step-1 epochs")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--subsample", type=int, help="steady-window training subsample")

    p = sub.add_parser("eval", help="aggregate reports into plot CSVs")
    _add_common(p)
    p.add_argument("--run", help="training output directory")

    p = sub.add_parser("channel-drop", help="retrain per muscle-group configuration")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--configs", nargs="+", help=f"subset of {sorted(CHANNEL_CONFIGS)}")
    p.add_argument("--p-label", type=float, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--subsample", type=int)

    p = sub.add_parser("report", help="print a run summary")
    _add_common(p)
    p.add_argument("--run")
    return parser


def _overrides_from(args: argparse.Namespace) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out:
        over["out"] = args.out
    data = getattr(args, "data", None) or getattr(args, "run", None)
    if data:
        over["dataset"] = data
    window: dict = {}
    if getattr(args, "p_label", None):
        window["p_labels_ms"] = args.p_label
    if getattr(args, "stride", None):
        window["stride"] = args.stride
    if window:
        over["window"] = window
    synth: dict = {}
    if getattr(args, "trials", None):
        synth["trials_per_task"] = args.trials
    if getattr(args, "noise_sd", None) is not None:
        synth["noise_sd"] = args.noise_sd
    if getattr(args, "steps_per_mode", None):
        synth["steps_per_mode"] = args.steps_per_mode
    if getattr(args, "inject_hum", None):
        synth["inject_hum"] = True
    if synth:
        over["synth"] = synth
    train: dict = {}
    if getattr(args, "no_notch", False):
        train["notch_enabled"] = False
    if getattr(args, "epochs", None):
        train["max_epochs"] = args.epochs
    if getattr(args, "batch_size", None):
        train["batch_size"] = args.batch_size
    if getattr(args, "subsample", None):
        train["train_subsample"] = args.subsample
    if train:
        over["train"] = train
    if getattr(args, "folds", None):
        over["folds"] = args.folds
    if getattr(args, "jobs", None):
        over["jobs"] = args.jobs
    if getattr(args, "channels", None):
        over["channels"] = args.channels
    if getattr(args, "configs", None):
        over["configs"] = args.configs
    return over


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "channel-drop": cmd_channel_drop,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        overrides = _overrides_from(args)
        if args.command == "channel-drop" and getattr(args, "configs", None):
            config = load_config(args.config, {k: v for k, v in overrides.items() if k != "configs"})
            config["configs"] = args.configs
        else:
            config = load_config(args.config, {k: v for k, v in overrides.items() if k != "configs"})
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, ContainerError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
