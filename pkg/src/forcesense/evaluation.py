"""Force-estimation metrics, the end-to-end benchmark and its report/trace outputs."""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import MeasurementOnly, build_index, fit_bias
from .config import METHODS, RunConfig
from .datagen import Dataset, build_dataset, generate_contact_trajectory, generate_freespace_trajectory
from .estimator import estimate_series
from .predictor import train

log = logging.getLogger(__name__)

FORCE_AXES = ("Fx", "Fy", "Fz")
METHOD_LABELS = {
    "measure_only": "Measure Only",
    "bias": "Measure w. Bias",
    "vector_search": "Vector Search",
    "nn": "NN-based",
}


class MetricError(ValueError):
    pass


class StageError(RuntimeError):
    """A benchmark stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {exc}")


def rmse(est, truth) -> float:
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise MetricError(f"length mismatch: {est.shape} vs {truth.shape}")
    keep = np.isfinite(est) & np.isfinite(truth)
    if not keep.any():
        raise MetricError("no overlapping available samples")
    d = est[keep] - truth[keep]
    return float(np.sqrt(np.mean(d * d)))


def force_range(truth) -> float:
    truth = np.asarray(truth, dtype=float)
    if truth.size == 0:
        raise MetricError("empty series")
    return float(truth.max() - truth.min())


@dataclass
class AxisMetrics:
    axis: str
    rmse: float
    range: float
    n_points: int

    def to_dict(self):
        return {"axis": self.axis, "rmse": self.rmse, "range": self.range, "n_points": self.n_points}


def axis_metrics(F_est: np.ndarray, F_true: np.ndarray, mask: np.ndarray) -> list[AxisMetrics]:
    return [
        AxisMetrics(ax, rmse(F_est[mask, k], F_true[mask, k]), force_range(F_true[mask, k]), int(mask.sum()))
        for k, ax in enumerate(FORCE_AXES)
    ]


@dataclass
class MethodResult:
    method: str
    axes: list[AxisMetrics]
    freespace_torque_rmse: list[float] | None = None

    @property
    def average_rmse(self) -> float:
        return float(sum(a.rmse for a in self.axes) / len(self.axes))

    @property
    def average_range(self) -> float:
        return float(sum(a.range for a in self.axes) / len(self.axes))

    @property
    def ratio(self) -> float:
        return self.average_rmse / self.average_range if self.average_range > 0 else float("inf")

    def to_dict(self):
        d = {
            "axes": [a.to_dict() for a in self.axes],
            "average": {"rmse": self.average_rmse, "range": self.average_range},
            "ratio": self.ratio,
        }
        if self.freespace_torque_rmse is not None:
            d["freespace_torque_rmse"] = self.freespace_torque_rmse
        return d


@dataclass
class BenchmarkReport:
    profile: str
    methods: dict[str, MethodResult]
    fingerprint: str
    seeds: dict
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "profile": self.profile,
            "config_fingerprint": self.fingerprint,
            "seeds": self.seeds,
            "methods": {m: r.to_dict() for m, r in self.methods.items()},
            **self.extras,
        }

    @classmethod
    def from_dict(cls, d):
        methods = {}
        for m, r in d["methods"].items():
            methods[m] = MethodResult(m, [AxisMetrics(**a) for a in r["axes"]], r.get("freespace_torque_rmse"))
        extras = {k: v for k, v in d.items() if k not in ("profile", "config_fingerprint", "seeds", "methods")}
        return cls(d["profile"], methods, d["config_fingerprint"], d["seeds"], extras)


@dataclass
class BenchmarkRun:
    """Everything one profile's benchmark leg produced."""

    report: BenchmarkReport
    contact: Dataset
    estimates: dict[str, np.ndarray]
    mask: np.ndarray
    models: object = None
    timings: dict = field(default_factory=dict)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # attribute any failure to its stage
        raise StageError(name, exc) from exc


def make_datasets(cfg: RunConfig, profile: str) -> tuple[Dataset, Dataset]:
    chain = cfg.chain()
    fs_cfg = cfg.freespace()
    ct_cfg = cfg.contact()
    traj = generate_freespace_trajectory(chain, fs_cfg)
    free = build_dataset(chain, cfg.sensor(profile, "freespace"), traj, rate_hz=fs_cfg.rate_hz,
                         meta={"profile": profile, "role": "freespace", "seed": fs_cfg.seed,
                               "duration_s": fs_cfg.duration_s, "config_fingerprint": cfg.fingerprint})
    ctraj, wrench = generate_contact_trajectory(chain, ct_cfg)
    contact = build_dataset(chain, cfg.sensor(profile, "contact"), ctraj, wrench, rate_hz=ct_cfg.rate_hz,
                            meta={"profile": profile, "role": "contact", "seed": ct_cfg.seed,
                                  "duration_s": ct_cfg.duration_s, "config_fingerprint": cfg.fingerprint})
    return free, contact


def fit_predictors(cfg: RunConfig, free: Dataset, methods, models=None, progress=None):
    out = {}
    train_part = free.subset("train")
    for m in methods:
        if m == "measure_only":
            out[m] = MeasurementOnly()
        elif m == "bias":
            out[m] = _stage("fit_bias", fit_bias, train_part, cfg.velocity_eps)
        elif m == "vector_search":
            out[m] = _stage("build_index", build_index, train_part, cfg.k)
        elif m == "nn":
            out[m] = models if models is not None else _stage("train", train, free, cfg.predictor(), progress=progress)
    return out


def _torque_rmse(pred, data: Dataset, sl: slice, warmup: int) -> list[float]:
    """Per-joint torque RMSE on rows ``sl``; the ``warmup`` rows before them feed the NN window."""
    start = max(sl.start - warmup, 0)
    part = data.rows(start, sl.stop)
    tau_hat, avail = pred.predict_series(part)
    idx = np.arange(sl.start, sl.stop)
    idx = idx[(idx >= warmup) & avail[idx - start]]
    d = tau_hat[idx - start] - data.tau_measured[idx]
    return np.sqrt(np.mean(d * d, axis=0)).tolist()


def run_benchmark(cfg: RunConfig, profile: str, methods=None, progress=None) -> BenchmarkRun:
    """Generate data, fit every method, estimate wrenches on the probing session and score them."""
    methods = [m for m in METHODS if m in (methods or cfg.methods)]
    timings = {}
    t0 = time.perf_counter()
    free, contact = _stage("generate_data", make_datasets, cfg, profile)
    timings["generate_data"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    preds = fit_predictors(cfg, free, methods, progress=progress)
    timings["fit"] = time.perf_counter() - t0

    W = cfg.predictor().window_len
    policy = cfg.policy()
    estimates = {}
    mask = np.ones(len(contact), dtype=bool)
    mask[: W - 1] = False  # the NN warm-up is excluded for every method
    t0 = time.perf_counter()
    for m in methods:
        _, F, ok = _stage(f"estimate[{m}]", estimate_series, preds[m], contact, policy)
        estimates[m] = F
        mask &= ok
    timings["estimate"] = time.perf_counter() - t0

    test = free.split("test")
    results = {}
    for m in methods:
        axes = _stage(f"score[{m}]", axis_metrics, estimates[m], contact.wrench, mask)
        fs = _torque_rmse(preds[m], free, test, W - 1)
        results[m] = MethodResult(m, axes, fs)
    report = BenchmarkReport(profile, results, cfg.fingerprint, cfg.seeds(), {
        "n_train_samples": free.partition["train"][1] - free.partition["train"][0],
        "n_contact_samples": len(contact),
        "n_scored_samples": int(mask.sum()),
    })
    return BenchmarkRun(report, contact, estimates, mask, preds.get("nn"), timings)


def method_ordering(report: BenchmarkReport) -> list[str]:
    return sorted(report.methods, key=lambda m: report.methods[m].average_rmse)


def _cell(x: float) -> str:
    # shortest round-trip form, so every printed number parses back to the stored float
    return repr(float(x))


def render_table(reports: list[BenchmarkReport]) -> str:
    """Aligned text table: rows Fx/Fy/Fz/Ave. per profile, one RMSE column per method plus range.

    Numbers are printed at full precision so the average rows and ratios can be
    recomputed from the printed axis cells.
    """
    methods = [m for m in METHODS if any(m in r.methods for r in reports)]
    head = [""] + [f"{METHOD_LABELS[m]} RMSE" for m in methods] + ["Range of Force"]
    rows = []
    tag = {"classic": "Cls", "si": "Si"}
    for r in reports:
        any_m = next(iter(r.methods.values()))
        for k, ax in enumerate(FORCE_AXES):
            rows.append([f"{ax} {tag.get(r.profile, r.profile)}"]
                        + [_cell(r.methods[m].axes[k].rmse) if m in r.methods else "-" for m in methods]
                        + [_cell(any_m.axes[k].range)])
        rows.append([f"Ave. {tag.get(r.profile, r.profile)}"]
                    + [_cell(r.methods[m].average_rmse) if m in r.methods else "-" for m in methods]
                    + [_cell(any_m.average_range)])
    widths = [max(len(row[c]) for row in [head] + rows) for c in range(len(head))]
    fmt = lambda row: " | ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(row, widths)))
    sep = "-+-".join("-" * w for w in widths)
    lines = [fmt(head), sep] + [fmt(r) for r in rows]
    ratios = []
    for r in reports:
        for m in methods:
            if m in r.methods:
                res = r.methods[m]
                ratios.append(f"{r.profile} {m}: {_cell(res.average_rmse)} / {_cell(res.average_range)} "
                              f"= {_cell(res.ratio)} ({100 * res.ratio:.2f}%)")
    return "\n".join(lines) + "\n\nRMSE / range ratios\n" + "\n".join(ratios) + "\n"


def parse_table(text: str) -> dict:
    """Read the numeric cells back from ``render_table`` output: {row label: [floats]}."""
    out = {}
    for line in text.splitlines():
        if " | " not in line or line.strip().startswith("|"):
            continue
        cells = [c.strip() for c in line.split(" | ")]
        if cells[0] in ("",) or not cells[0].split()[0] in FORCE_AXES + ("Ave.",):
            continue
        out[cells[0]] = [float("nan") if c == "-" else float(c) for c in cells[1:]]
    return out


_RATIO_LINE = re.compile(r"^(\S+) (\S+): (\S+) / (\S+) = (\S+) ")


def parse_ratios(text: str) -> dict:
    """Read the ratio lines of ``render_table`` output: {(profile, method): (rmse, range, ratio)}."""
    out = {}
    for line in text.splitlines():
        m = _RATIO_LINE.match(line)
        if m:
            out[(m.group(1), m.group(2))] = tuple(float(m.group(k)) for k in (3, 4, 5))
    return out


def export_trace(t, truth, estimates: dict[str, np.ndarray], path, mask=None) -> Path:
    """Write a columnar trace: t, true wrench (6 columns) and each method's estimate (6 columns).

    Rows outside ``mask`` (or NaN estimates) are written as ``nan``.
    """
    path = Path(path)
    t = np.asarray(t, dtype=float)
    truth = np.asarray(truth, dtype=float)
    comps = ("fx", "fy", "fz", "tx", "ty", "tz")
    cols = ["t"] + [f"truth_{c}" for c in comps]
    blocks = [t[:, None], truth]
    for m, F in estimates.items():
        F = np.array(F, dtype=float)
        if mask is not None:
            F[~mask] = np.nan
        cols += [f"{m}_{c}" for c in comps]
        blocks.append(F)
    data = np.hstack(blocks)
    try:
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data.tolist():
                fh.write(",".join(repr(v) for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
    return path


def write_report(reports: list[BenchmarkReport], json_path, table_path):
    doc = {"reports": [r.to_dict() for r in reports]}
    Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    Path(table_path).write_text(render_table(reports))
