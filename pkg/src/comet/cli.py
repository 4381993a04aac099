"""Command-line surface: train, score (batch or streaming), eval, synth.

Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric/model. The COMET_LOG
environment variable controls verbosity ("quiet" silences progress lines;
default "info"). Configuration precedence is preset < config file < explicit
command-line overrides, and the resolved configuration is echoed into every
output artifact.

File formats
------------
Config file: JSON with the fields of config.RunConfig (all optional; nested
"selection", "train", "tta" objects).

Score file: '# comet-scores v1' then '# config: <json>' then a CSV table
with columns index, mem, quant, score and, when the scored data had labels,
label. One row per timestep.

Metric report: '# comet-metrics v1' then '# config: <json>' then key=value
lines for f1_k0, f1_k100, auc_roc, auc_pr and the two best thresholds.

Synthetic spec: JSON with the fields of data.SyntheticSpec; anomalies are
objects with kind (point|contextual|collective), start, duration, magnitude.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import RunConfig, preset_config
from .errors import (CheckpointFormatError, CometError, ConfigError, DataError,
                     MetricError, NumericError, ShapeError)
from .evaluation import MetricReport, evaluate
from .scoring import ScoreSeries, score_series
from .train import Checkpoint, load_checkpoint, save_checkpoint, train
from .tta import stream_series

SCORES_MAGIC = "# comet-scores v1"
METRICS_MAGIC = "# comet-metrics v1"

# fields that must match the checkpoint at scoring time (they fix array shapes)
STRUCTURAL_FIELDS = ("patch_sizes", "strides", "embed_dim", "core_dim",
                     "codebook_size", "window_length")


class UsageError(CometError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    """preset < config file < command-line overrides."""
    if base is not None:
        cfg_dict = base.to_dict()
    elif getattr(args, "preset", None):
        cfg_dict = preset_config(args.preset).to_dict()
    else:
        cfg_dict = RunConfig().to_dict()
    if getattr(args, "config", None):
        cfg_dict = _merge(cfg_dict, _load_config_file(args.config))
    if getattr(args, "seed", None) is not None:
        cfg_dict["train"]["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        cfg_dict["threads"] = args.threads
    if getattr(args, "tta", None) is not None:
        cfg_dict["tta"]["enabled"] = args.tta == "on"
    return RunConfig.from_dict(cfg_dict)


def _progress(line: str):
    if os.environ.get("COMET_LOG", "info").lower() != "quiet":
        print(line)


def _config_comment(config: RunConfig) -> str:
    return "# config: " + json.dumps(config.to_dict(), sort_keys=True)


def write_scores(path, scores: ScoreSeries, config: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SCORES_MAGIC + "\n")
        fh.write(_config_comment(config) + "\n")
        cols = "index,mem,quant,score"
        if scores.labels is not None:
            cols += ",label"
        fh.write(cols + "\n")
        for i in range(scores.score.size):
            row = (f"{i},{float(scores.mem[i])!r},{float(scores.quant[i])!r},"
                   f"{float(scores.score[i])!r}")
            if scores.labels is not None:
                row += f",{int(scores.labels[i])}"
            fh.write(row + "\n")


def read_scores(path) -> ScoreSeries:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise DataError(f"score file not found: {path}") from None
    if not lines or lines[0] != SCORES_MAGIC:
        raise DataError(f"{path}: not a comet score file")
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    if not body:
        raise DataError(f"{path}: missing column header")
    cols = body[0].split(",")
    has_labels = "label" in cols
    mem, quant, score, labels = [], [], [], []
    for rownum, ln in enumerate(body[1:], start=1):
        cells = ln.split(",")
        if len(cells) != len(cols):
            raise DataError(f"{path}: row {rownum} has {len(cells)} cells")
        try:
            mem.append(float(cells[1]))
            quant.append(float(cells[2]))
            score.append(float(cells[3]))
            if has_labels:
                labels.append(int(cells[4]))
        except ValueError as exc:
            raise DataError(f"{path}: row {rownum}: {exc}") from None
    return ScoreSeries(
        mem=np.asarray(mem),
        quant=np.asarray(quant),
        score=np.asarray(score),
        labels=np.asarray(labels, dtype=np.int64) if has_labels else None,
    )


def write_metrics(path, report: MetricReport, config: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_MAGIC + "\n")
        fh.write(_config_comment(config) + "\n")
        for line in report.lines():
            fh.write(line + "\n")


def read_metrics(path) -> dict[str, float]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_MAGIC:
        raise DataError(f"{path}: not a comet metric report")
    out = {}
    for ln in lines[1:]:
        if ln.startswith("#") or not ln.strip():
            continue
        key, _, val = ln.partition("=")
        out[key] = float(val)
    return out


def cmd_train(args) -> int:
    config = resolve_config(args)
    if not Path(args.data).exists():
        raise DataError(f"training data file not found: {args.data}")
    series = data_mod.load_csv(args.data)
    mean = series.values.mean(axis=0)
    std = series.values.std(axis=0)
    standardized = data_mod.apply_standardization(series.values, mean, std, config.eps)
    ckpt = train(standardized, config, log=_progress)
    ckpt.norm_mean = mean
    ckpt.norm_std = std
    save_checkpoint(ckpt, args.out)
    _progress(f"checkpoint written to {args.out}")
    return 0


def _scoring_config(args, ckpt: Checkpoint) -> RunConfig:
    config = resolve_config(args, base=ckpt.config)
    base = ckpt.config.to_dict()
    new = config.to_dict()
    for field in STRUCTURAL_FIELDS:
        if base[field] != new[field]:
            raise ConfigError(
                f"{field} differs from the checkpoint ({base[field]} -> {new[field]}); "
                f"structural fields cannot change at scoring time"
            )
    return config


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = _scoring_config(args, ckpt)
    if not Path(args.data).exists():
        raise DataError(f"data file not found: {args.data}")
    with open(args.data, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    label_column = args.label_column if args.label_column in header else None
    series = data_mod.load_csv(args.data, label_column=label_column)
    values = data_mod.apply_standardization(
        series.values, ckpt.norm_mean, ckpt.norm_std, config.eps
    )
    if config.tta.enabled:
        state = ckpt.state.copy()
        scores = stream_series(values, state, ckpt.bank, ckpt.activations,
                               config, labels=series.labels)
    else:
        scores = score_series(ckpt.state, ckpt.bank, values, config,
                              labels=series.labels)
    write_scores(args.out, scores, config)
    _progress(f"scores for {scores.score.size} timesteps written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    scores = read_scores(args.data)
    if args.labels:
        labels = data_mod.load_csv(args.labels, label_column="label").labels
    else:
        labels = scores.labels
    if labels is None:
        raise DataError(
            "no labels: score file has no label column and --labels not given"
        )
    if labels.size != scores.score.size:
        raise DataError(
            f"scores ({scores.score.size}) and labels ({labels.size}) differ in length"
        )
    config = resolve_config(args)
    report = evaluate(scores.score, labels, threshold_grid=args.threshold_grid)
    for line in report.lines():
        print(line)
    if args.out:
        write_metrics(args.out, report, config)
    return 0


def default_synthetic_spec() -> data_mod.SyntheticSpec:
    """Demo corpus: 2-variable sine mixture, 5 point + 3 sustained collective anomalies."""
    return data_mod.SyntheticSpec(
        n_vars=2,
        train_length=4000,
        test_length=2000,
        noise_level=0.1,
        seed=42,
        anomalies=[
            data_mod.AnomalySpec("point", 150, 1, 8.0),
            data_mod.AnomalySpec("point", 700, 1, 7.0),
            data_mod.AnomalySpec("point", 1250, 1, 6.5),
            data_mod.AnomalySpec("point", 1850, 1, 7.5),
            data_mod.AnomalySpec("point", 1950, 1, 6.0),
            data_mod.AnomalySpec("collective", 300, 250, 6.0),
            data_mod.AnomalySpec("collective", 900, 300, 6.0),
            data_mod.AnomalySpec("collective", 1500, 250, 7.0),
        ],
    )


def cmd_synth(args) -> int:
    if args.spec:
        spec = data_mod.SyntheticSpec.from_json_file(args.spec)
    else:
        spec = default_synthetic_spec()
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    dataset = data_mod.synthesize(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_mod.write_csv(out / "train.csv", dataset.train)
    data_mod.write_csv(out / "test.csv", dataset.test, label_column="label")
    with open(out / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _progress(f"synthetic corpus written to {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="comet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help="named dataset preset (psm|swat|smap|msl|wadi)")
        p.add_argument("--seed", type=int, help="override the training seed")
        p.add_argument("--threads", type=int, help="parallelism for window scoring")

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p_train)
    p_train.add_argument("--data", required=True, help="training CSV (assumed normal)")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.set_defaults(fn=cmd_train)

    p_score = sub.add_parser("score", help="score a series with a trained model")
    common(p_score)
    p_score.add_argument("--checkpoint", required=True)
    p_score.add_argument("--data", required=True, help="CSV to score")
    p_score.add_argument("--out", required=True, help="score file output path")
    p_score.add_argument("--tta", choices=("on", "off"), default="off",
                         help="stream with online codebook adaptation")
    p_score.add_argument("--label-column", default="label",
                         help="label column name, copied into the score file")
    p_score.set_defaults(fn=cmd_score)

    p_eval = sub.add_parser("eval", help="compute metrics from a score file")
    common(p_eval)
    p_eval.add_argument("--data", required=True, help="score file")
    p_eval.add_argument("--labels", help="CSV with a 'label' column (else embedded)")
    p_eval.add_argument("--out", help="metric report output path")
    p_eval.add_argument("--threshold-grid", type=int, default=0,
                        help="cap the threshold sweep (0 = exact)")
    p_eval.set_defaults(fn=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    common(p_synth)
    p_synth.add_argument("--spec", help="synthetic spec JSON (default: demo corpus)")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, MetricError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ShapeError, NumericError, CheckpointFormatError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
