"""Command-line workbench: simulate, train, detect, report, sweep.

Exit codes: 0 normal, 10 alarm raised, 2 usage/config error, 3 output I/O
error, 4 training failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnosis, lstm, pca
from .attack import canonical_scenario
from .config import ConfigError, load_scenario, load_toml, out_root
from .plant import (CHANNELS, DEFAULT_INIT, DEFAULT_ZONE_MAP, PlantParams,
                    run_episode, read_trace_csv, write_trace_csv, _fmt)
from .svg import line_plot

EXIT_OK, EXIT_ALARM, EXIT_USAGE, EXIT_IO, EXIT_TRAIN = 0, 10, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(
                    v if isinstance(v, str) else _fmt(float(v))
                    for v in row) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


def _model_name(channel_order) -> str:
    channels = tuple(channel_order)
    if channels == CHANNELS:
        return "global"
    if set(channels) == DEFAULT_ZONE_MAP.zone1:
        return "zone1ch"
    if set(channels) == DEFAULT_ZONE_MAP.zone2:
        return "zone2ch"
    return "custom"


# a model watching one zone's channels detects compromise of the *other*
# zone: the attacker's concealment hides its own zone perfectly, while the
# cross-zone effects of its overridden actuators stay visible
WATCHED_TO_DETECTED = {"zone1ch": 2, "zone2ch": 1}


def cmd_simulate(args) -> int:
    cfg = load_scenario(args.config)
    out = out_root(args.out_dir)
    seed = cfg.seed if args.seed is None else args.seed
    episode = run_episode(cfg.init, cfg.params, cfg.n_steps,
                          attack=cfg.attack, noise_frac=cfg.noise_frac,
                          seed=seed)
    try:
        write_trace_csv(out / "telemetry.csv", episode.telemetry_array())
        write_trace_csv(out / "truth.csv", episode.truth_array())
    except OSError as exc:
        raise CliError(f"cannot write traces: {exc}", EXIT_IO)
    meta = {"label": cfg.label, "seed": seed, "n_steps": cfg.n_steps,
            "attack_start": cfg.attack.start_step if cfg.attack else None}
    (out / "run.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"wrote {out / 'telemetry.csv'} ({cfg.n_steps} steps)")
    return EXIT_OK


def _resolve_channels(name):
    if name == "all":
        return None
    if name == "zone1":
        return DEFAULT_ZONE_MAP.channels(1)
    if name == "zone2":
        return DEFAULT_ZONE_MAP.channels(2)
    raise CliError(f"unknown channel set {name!r}", EXIT_USAGE)


def cmd_train(args) -> int:
    try:
        frames = read_trace_csv(args.telemetry)
    except (OSError, ValueError) as exc:
        raise CliError(f"bad telemetry CSV: {exc}", EXIT_USAGE)
    out = out_root(args.out_dir)
    channels = _resolve_channels(args.channels)
    overrides = load_toml(args.config).get("train", {}) if args.config else {}
    model_path = Path(args.model) if args.model else out / f"{args.detector}.json"

    if args.detector == "pca":
        d = int(overrides.get("d", 3))
        model = pca.fit_pca(frames, d=d, channels=channels)
        pca.save_pca(model, model_path)
        _write_csv(model_path.with_suffix(".log.csv"),
                   ["component", "eigenvalue"],
                   [(str(i), lam) for i, lam in enumerate(model.eigenvalues)])
    else:
        known = {f.name for f in lstm.TrainConfig.__dataclass_fields__.values()}
        bad = set(overrides) - known
        if bad:
            raise CliError(f"[train]: unknown keys {sorted(bad)}", EXIT_USAGE)
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = lstm.TrainConfig(**overrides)
        log = []
        try:
            model = lstm.train(frames, cfg, channels=channels, log=log)
        except lstm.TrainingDivergence as exc:
            raise CliError(f"training diverged: {exc}", EXIT_TRAIN)
        lstm.save_lstm(model, model_path)
        _write_csv(model_path.with_suffix(".log.csv"),
                   ["epoch", "val_loss"],
                   [(str(e), v) for e, v in log])
    print(f"wrote {model_path}")
    return EXIT_OK


def _load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read model {path}: {exc}", EXIT_USAGE)
    if "components" in doc:
        return "pca", pca.load_pca(path)
    if "weights" in doc:
        return "lstm", lstm.load_lstm(path)
    raise CliError(f"{path}: not a recognized model file", EXIT_USAGE)


def cmd_detect(args) -> int:
    t_start = time.perf_counter()
    try:
        frames = read_trace_csv(args.telemetry)
    except (OSError, ValueError) as exc:
        raise CliError(f"bad telemetry CSV: {exc}", EXIT_USAGE)
    out = out_root(args.out_dir)
    if not args.model:
        raise CliError("at least one --model is required", EXIT_USAGE)

    pca_rates = {}
    pca_sustained = False
    score_series = {}
    proj_plot, score_plot = {}, {}
    for path in args.model:
        kind, model = _load_model(path)
        name = _model_name(model.channel_order)
        if kind == "pca":
            proj = pca.project_trace(model, frames)
            t2, spe, alarms = pca.statistics_trace(model, frames)
            pca_rates[name] = float(alarms.mean())
            if len(pca.sustained_alarm_indices(alarms, dwell=25)):
                pca_sustained = True
            _write_csv(out / f"projections_{name}.csv",
                       ["t"] + [f"pc{i + 1}" for i in range(proj.shape[1])]
                       + ["t2", "spe", "alarm"],
                       [(str(t), *row, t2[t], spe[t], str(int(alarms[t])))
                        for t, row in enumerate(proj)])
            for i in range(proj.shape[1]):
                proj_plot[f"{name} pc{i + 1}"] = (np.arange(len(proj)), proj[:, i])
        else:
            series = lstm.score_trace(model, frames)
            score_series[name] = series
            steps = np.arange(series.start, series.start + len(series))
            _write_csv(out / f"scores_{name}.csv", ["t", "score"],
                       [(str(t), s) for t, s in zip(steps, series.scores)])
            score_plot[name] = (steps, series.scores)

    verdict = None
    rule = None
    if args.rule:
        try:
            rule = diagnosis.load_rule(args.rule)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read rule {args.rule}: {exc}", EXIT_USAGE)
        if "global" not in score_series:
            raise CliError("classification needs a global LSTM model",
                           EXIT_USAGE)
        zone_scores = {WATCHED_TO_DETECTED[n]: s
                       for n, s in score_series.items()
                       if n in WATCHED_TO_DETECTED}
        verdict = diagnosis.classify(rule, score_series["global"],
                                     zone_scores or None)
        diagnosis.save_verdict(verdict, rule, out / "verdict.json")

    if proj_plot:
        line_plot(out / "plot_projections.svg", proj_plot,
                  title="PCA projections", y_label="projection")
    if score_plot:
        line_plot(out / "plot_scores.svg", score_plot,
                  title="confidence score", y_label="score",
                  vline=verdict.onset if verdict and verdict.is_alarm else None)

    report = {
        "telemetry": str(args.telemetry),
        "pca_alarm_rate": pca_rates or None,
        "score_series": {n: f"scores_{n}.csv" for n in score_series},
        "verdict": (json.loads((out / "verdict.json").read_text())
                    if verdict else None),
        "elapsed_s": round(time.perf_counter() - t_start, 3),
    }
    (out / "report.json").write_text(json.dumps(report, indent=1) + "\n")
    if verdict is not None and verdict.is_alarm:
        print(f"ALARM class={verdict.label} zone={verdict.zone} "
              f"onset={verdict.onset}")
        return EXIT_ALARM
    if verdict is None and pca_sustained:
        print("ALARM (sustained reconstruction-error alarm)")
        return EXIT_ALARM
    print("normal")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.reports:
        raise CliError("at least one report JSON is required", EXIT_USAGE)
    rows = []
    for path in args.reports:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read report {path}: {exc}", EXIT_USAGE)
        rows.append(doc)
    out = out_root(args.out_dir)
    header = ["label", "seed", "verdict", "class", "zone", "onset",
              "latency", "steady_mean", "pca_alarm_rate", "correct"]
    table = []
    n_attacked = n_correct = 0
    for doc in rows:
        v = doc.get("verdict") or {}
        label = doc.get("label", "?")
        true_start = doc.get("attack_start")
        onset = v.get("onset")
        latency = (onset - true_start
                   if onset is not None and true_start is not None else "")
        attacked = true_start is not None
        correct = (v.get("class") == label if attacked
                   else v.get("verdict", "Normal") == "Normal")
        if attacked:
            n_attacked += 1
            n_correct += bool(correct)
        rates = doc.get("pca_alarm_rate") or {}
        table.append([label, str(doc.get("seed", "")),
                      v.get("verdict", "Normal"), str(v.get("class") or ""),
                      "" if v.get("zone") is None else str(v["zone"]),
                      "" if onset is None else str(onset),
                      "" if latency == "" else str(latency),
                      "" if v.get("steady_mean") is None else v["steady_mean"],
                      rates.get("global", ""),
                      str(int(bool(correct)))])
    _write_csv(out / "report.csv", header, table)
    with open(out / "report.txt", "w") as fh:
        widths = [max(len(str(r[i])) for r in [header] + table)
                  for i in range(len(header))]
        for r in [header] + table:
            fh.write("  ".join(str(c).ljust(w) for c, w in zip(r, widths))
                     .rstrip() + "\n")
        if n_attacked:
            fh.write(f"\nclassification accuracy: {n_correct}/{n_attacked} "
                     f"({n_correct / n_attacked:.1%})\n")
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = load_toml(args.config).get("sweep", {})
    out = out_root(args.out_dir)
    seeds = [int(s) for s in doc.get("seeds", list(range(103, 113)))]
    scenarios = doc.get("scenarios", ["P0_V10", "P1_V10"])
    train_seed = int(doc.get("train_seed", 1))
    calib_seed = int(doc.get("calib_seed", 99))
    n_train = int(doc.get("n_steps_train", 6000))
    n_eval = int(doc.get("n_steps_eval", 1500))
    n_replay = int(doc.get("n_steps_replay", max(n_eval + 1100, 2600)))
    start_step = int(doc.get("start_step", 500))
    noise = float(doc.get("noise_frac", 0.005))
    epochs = int(doc.get("epochs", 30))
    lstm_seed = int(doc.get("lstm_seed", 0))
    params = PlantParams()
    t0 = time.perf_counter()

    def simulate(n, seed, attack=None):
        return run_episode(DEFAULT_INIT, params, n, attack=attack,
                           noise_frac=noise, seed=seed).telemetry_array()

    print("simulating training trace...")
    train_tel = simulate(n_train, train_seed)
    (out / "models").mkdir(exist_ok=True)
    write_trace_csv(out / "models" / "train_telemetry.csv", train_tel)

    models = {}
    for name, channels in (("global", None),
                           ("zone1ch", DEFAULT_ZONE_MAP.channels(1)),
                           ("zone2ch", DEFAULT_ZONE_MAP.channels(2))):
        print(f"training lstm[{name}]...")
        cfg = lstm.TrainConfig(epochs=epochs, seed=lstm_seed)
        try:
            models[name] = lstm.train(train_tel, cfg, channels=channels)
        except lstm.TrainingDivergence as exc:
            raise CliError(f"training diverged ({name}): {exc}", EXIT_TRAIN)
        lstm.save_lstm(models[name], out / "models" / f"lstm_{name}.json")
    pca_model = pca.fit_pca(train_tel, d=3)
    pca.save_pca(pca_model, out / "models" / "pca_global.json")

    print("calibrating diagnosis rule...")
    calib_normal = simulate(max(n_eval, 1100), calib_seed)
    normal_series = lstm.score_trace(models["global"], calib_normal)
    replay_calib = simulate(n_replay, calib_seed)
    labeled = {}
    for label in scenarios:
        attack = canonical_scenario(label, replay_calib, start_step)
        tel = simulate(n_eval, calib_seed, attack)
        labeled[label] = (lstm.score_trace(models["global"], tel), start_step)
    rule = diagnosis.calibrate_bands(labeled, normal_series,
                                     window=models["global"].config.window)
    diagnosis.save_rule(rule, out / "rule.json")

    run_reports = []
    for seed in seeds:
        replay = simulate(n_replay, seed)
        for label in ["normal"] + list(scenarios):
            attack = None if label == "normal" else \
                canonical_scenario(label, replay, start_step)
            tel = simulate(n_eval, seed, attack)
            series = {n: lstm.score_trace(m, tel) for n, m in models.items()}
            zone_scores = {WATCHED_TO_DETECTED[n]: s
                           for n, s in series.items()
                           if n in WATCHED_TO_DETECTED}
            verdict = diagnosis.classify(rule, series["global"], zone_scores)
            _, _, alarms = pca.statistics_trace(pca_model, tel)
            run_reports.append({
                "label": label, "seed": seed,
                "attack_start": start_step if attack else None,
                "pca_alarm_rate": {"global": float(alarms.mean())},
                "verdict": {
                    "verdict": verdict.verdict, "class": verdict.label,
                    "zone": verdict.zone, "onset": verdict.onset,
                    "steady_mean": verdict.steady_mean,
                },
            })
            print(f"  seed {seed} {label}: {verdict.verdict}"
                  + (f" class={verdict.label} zone={verdict.zone}"
                     f" onset={verdict.onset}" if verdict.is_alarm else ""))

    (out / "runs").mkdir(exist_ok=True)
    report_paths = []
    for doc in run_reports:
        p = out / "runs" / f"{doc['label']}_{doc['seed']}.json"
        p.write_text(json.dumps(doc, indent=1) + "\n")
        report_paths.append(p)
    ns = argparse.Namespace(reports=[str(p) for p in report_paths],
                            out_dir=str(out))
    cmd_report(ns)
    print(f"sweep finished in {time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icsguard",
        description="two-tank plant simulation and concealed-attack detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the plant and write trace CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a detector on normal telemetry")
    p.add_argument("--telemetry", required=True)
    p.add_argument("--detector", choices=("pca", "lstm"), required=True)
    p.add_argument("--channels", default="all",
                   choices=("all", "zone1", "zone2"))
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", help="output model path")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score a telemetry trace")
    p.add_argument("--telemetry", required=True)
    p.add_argument("--model", action="append", default=[])
    p.add_argument("--rule")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="summarize run reports")
    p.add_argument("reports", nargs="*")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="train, calibrate and evaluate end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
