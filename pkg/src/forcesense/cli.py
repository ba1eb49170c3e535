"""``forcesense`` command line: gen-data, train, eval and bench.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import BiasModel, FitError, MeasurementOnly, build_index, fit_bias
from .config import METHODS, PROFILES, RunConfig
from .datagen import ConfigError, CsvParseError, load_csv, save_csv
from .estimator import SingularJacobianError, estimate_series
from .evaluation import (
    MetricError,
    StageError,
    axis_metrics,
    export_trace,
    make_datasets,
    run_benchmark,
    write_report,
)
from .predictor import JointModelSet, train

log = logging.getLogger("forcesense")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ConfigError):
    pass


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (CsvParseError, FitError, FileNotFoundError, json.JSONDecodeError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (SingularJacobianError, MetricError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, ValueError):
        return EXIT_DATA
    return 1


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- gen-data ------------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    free, contact = make_datasets(cfg, args.profile)
    save_csv(free, out / "freespace.csv")
    save_csv(contact, out / "contact.csv")
    sensor = cfg.sensor(args.profile, "freespace")
    manifest = {
        "config_fingerprint": cfg.fingerprint,
        "profile": args.profile,
        "bias_kind": sensor.bias_kind,
        "seeds": cfg.seeds(),
        "freespace": {"file": "freespace.csv", "rows": len(free), "duration_s": cfg.freespace().duration_s,
                      "rate_hz": free.rate_hz},
        "contact": {"file": "contact.csv", "rows": len(contact), "duration_s": cfg.contact().duration_s,
                    "rate_hz": contact.rate_hz, "profile": cfg.contact().profile},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out / 'freespace.csv'} ({len(free)} rows) and {out / 'contact.csv'} ({len(contact)} rows)")
    return EXIT_OK


# --- train ---------------------------------------------------------------------

def _data_file(path: str, default_name: str) -> Path:
    p = Path(path)
    return p / default_name if p.is_dir() else p


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    data_path = _data_file(args.data, "freespace.csv")
    free = load_csv(data_path)
    pcfg = cfg.predictor()
    n_train = free.partition["train"][1] - free.partition["train"][0]
    if n_train < pcfg.window_len + 1:
        raise ConfigError(f"window_len={pcfg.window_len} needs at least {pcfg.window_len + 1} training samples; "
                          f"{data_path} has {n_train}")
    methods = args.methods or ["nn", "bias", "vector_search"]
    train_part = free.subset("train")
    written = []
    if "nn" in methods:
        models = train(free, pcfg, progress=lambda e, tr, va, act: log.info(
            "epoch %d val %s active %d", e, np.round(va, 5).tolist(), int(act.sum())))
        doc = models.to_dict()
        doc["config_fingerprint"] = cfg.fingerprint
        _write_json(out / "model.json", doc)
        with open(out / "history.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["joint", "epoch", "train_loss", "val_loss"])
            for j, m in enumerate(models.models):
                for e, (tr, va) in enumerate(zip(m.train_loss, m.val_loss)):
                    w.writerow([j + 1, e, repr(tr), repr(va)])
        written += ["model.json", "history.csv"]
    if "bias" in methods:
        b = fit_bias(train_part, cfg.velocity_eps)
        _write_json(out / "bias.json", {
            "kind": "bias_model", "config_fingerprint": cfg.fingerprint, "bias": b.bias.tolist(),
            "n_samples_used": b.n_samples_used, "velocity_eps": b.velocity_eps,
        })
        written.append("bias.json")
    if "vector_search" in methods:
        build_index(train_part, cfg.k)  # fail early if k does not fit
        _write_json(out / "vector_search.json", {
            "kind": "vector_search_index", "config_fingerprint": cfg.fingerprint,
            "data": str(data_path.resolve()), "data_sha256": _file_digest(data_path),
            "split": "train", "k": cfg.k,
        })
        written.append("vector_search.json")
    print("wrote " + ", ".join(str(out / f) for f in written))
    return EXIT_OK


# --- eval ----------------------------------------------------------------------

_MODEL_KINDS = {"nn": "lstm_joint_models", "bias": "bias_model", "vector_search": "vector_search_index"}


def load_predictor(method: str, model_path, k_override: int | None = None):
    """Rebuild a predictor from a file written by ``train``; the file kind must match ``method``."""
    if method == "measure_only":
        return MeasurementOnly()
    if model_path is None:
        raise UsageError(f"--model is required for method {method!r}")
    doc = json.loads(Path(model_path).read_text())
    kind = doc.get("kind")
    if kind != _MODEL_KINDS[method]:
        raise UsageError(f"{model_path} holds a {kind!r} model, which cannot serve method {method!r}")
    if method == "nn":
        return JointModelSet.from_dict(doc)
    if method == "bias":
        return BiasModel(np.asarray(doc["bias"], dtype=float), int(doc["n_samples_used"]),
                         float(doc["velocity_eps"]))
    data = Path(doc["data"])
    if _file_digest(data) != doc["data_sha256"]:
        raise ValueError(f"{data} changed since the index was recorded")
    k = doc["k"] if k_override is None else k_override
    return build_index(load_csv(data).subset(doc["split"]), k)


def cmd_eval(args, cfg: RunConfig) -> int:
    pred = load_predictor(args.method, args.model, args.k)
    contact = load_csv(_data_file(args.data, "contact.csv"))
    if not contact.has_contact.any():
        raise ValueError(f"{args.data} holds no contact samples to score")
    _, F, ok = estimate_series(pred, contact, cfg.policy())
    mask = ok & contact.has_contact
    axes = axis_metrics(F, contact.wrench, mask)
    doc = {
        "config_fingerprint": cfg.fingerprint,
        "method": args.method,
        "data": str(args.data),
        "axes": [a.to_dict() for a in axes],
        "average": {"rmse": sum(a.rmse for a in axes) / 3, "range": sum(a.range for a in axes) / 3},
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- bench ---------------------------------------------------------------------

def cmd_bench(args, cfg: RunConfig) -> int:
    from .plotting import plot_rmse_bars, plot_trace

    out = _out_dir(args, cfg)
    methods = args.methods or cfg.methods
    profiles = args.profiles or list(PROFILES)
    reports = []
    for p in profiles:
        log.info("benchmark leg %s", p)
        run = run_benchmark(cfg, p, methods, progress=lambda e, tr, va, act: log.info(
            "[%s] epoch %d val %s", p, e, np.round(va, 5).tolist()))
        reports.append(run.report)
        c = run.contact
        export_trace(c.t, c.wrench, run.estimates, out / f"traces_{p}.csv", run.mask)
        plot_trace(c.t, c.wrench, run.estimates, run.mask, out / f"trace_{p}.png",
                   title=f"{p} profile, config {cfg.fingerprint}")
        if run.models is not None:
            doc = run.models.to_dict()
            doc["config_fingerprint"] = cfg.fingerprint
            _write_json(out / f"model_{p}.json", doc)
        log.info("[%s] timings %s", p, {k: round(v, 1) for k, v in run.timings.items()})
    write_report(reports, out / "report.json", out / "report.txt")
    plot_rmse_bars(reports, out / "rmse.png")
    sys.stdout.write((out / "report.txt").read_text())
    print(f"config fingerprint {cfg.fingerprint}; outputs in {out}")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forcesense", description="Contact force estimation workbench.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration (defaults built in)")
        p.add_argument("--out", help="output directory (file for eval)")

    g = sub.add_parser("gen-data", help="simulate free-space and contact datasets")
    common(g)
    g.add_argument("--profile", choices=PROFILES, default="classic")

    t = sub.add_parser("train", help="train the joint networks and fit the baselines")
    common(t)
    t.add_argument("--data", required=True, help="free-space CSV or the gen-data output directory")
    t.add_argument("--methods", nargs="+", choices=["nn", "bias", "vector_search"])

    e = sub.add_parser("eval", help="score one method on a contact dataset")
    common(e)
    e.add_argument("--data", required=True, help="contact CSV or the gen-data output directory")
    e.add_argument("--method", required=True, choices=METHODS)
    e.add_argument("--model", help="model file written by train")
    e.add_argument("--k", type=int, help="override the neighbour count of a vector-search model")

    b = sub.add_parser("bench", help="full benchmark over both robot profiles")
    common(b)
    b.add_argument("--methods", nargs="+", choices=METHODS)
    b.add_argument("--profiles", nargs="+", choices=PROFILES)
    return parser


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    stage = "config"
    try:
        cfg = RunConfig.load(args.config)
        stage = args.command
        return COMMANDS[args.command](args, cfg)
    except StageError as exc:
        print(f"forcesense: {args.command}: stage '{exc.stage}' failed: {exc.__cause__}", file=sys.stderr)
        return _exit_code(exc)
    except Exception as exc:  # map every failure onto the exit-code contract
        code = _exit_code(exc)
        if code == 1:
            raise
        print(f"forcesense: {stage}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
