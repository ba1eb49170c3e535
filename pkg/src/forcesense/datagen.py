"""Trajectory generation, dataset assembly and CSV serialization."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .manipulator import (
    KinematicChain,
    JointState,
    SensorModel,
    Wrench,
    freespace_torque_batch,
    jacobian,
    sensor_series,
)

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
AXES = ("fx", "fy", "fz", "tx", "ty", "tz")


class ConfigError(ValueError):
    pass


class CsvParseError(ValueError):
    def __init__(self, path, line, column, message):
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}: line {line}, column {column}: {message}")


def _per_joint(value, n=6, name="value"):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name} must be a scalar or a list of {n} values")
    return arr


@dataclass
class TrajectoryConfig:
    """Sum-of-sinusoids excitation with periodic dwells.

    ``amplitude_fraction`` is the share of each joint's half-range spent on
    the summed harmonic amplitudes; the dwell warp stops the motion for
    ``dwell_s`` out of every ``dwell_period_s`` seconds.
    """

    duration_s: float = 600.0
    rate_hz: float = 100.0
    n_harmonics: int | list[int] = 3
    amplitude_fraction: float | list[float] = 0.8
    max_velocity: float | list[float] = 0.6
    freq_range_hz: tuple[float, float] = (0.02, 0.25)
    dwell_period_s: float = 20.0
    dwell_s: float = 2.0
    ramp_s: float = 1.0
    seed: int = 0

    def validate(self, n_joints=6):
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be > 0")
        if not self.rate_hz > 0:
            raise ConfigError("rate_hz must be > 0")
        harm = np.asarray(self.n_harmonics)
        if np.any(harm < 0):
            raise ConfigError("n_harmonics must be >= 0")
        amp = _per_joint(self.amplitude_fraction, n_joints, "amplitude_fraction")
        if np.any(amp < 0) or np.any(amp > 1):
            raise ConfigError("amplitude_fraction must lie in [0, 1] to keep joints inside their limits")
        if np.any(_per_joint(self.max_velocity, n_joints, "max_velocity") <= 0):
            raise ConfigError("max_velocity must be > 0")
        lo, hi = self.freq_range_hz
        if not 0 < lo <= hi:
            raise ConfigError("freq_range_hz must satisfy 0 < lo <= hi")
        if self.dwell_s < 0 or self.ramp_s < 0:
            raise ConfigError("dwell_s and ramp_s must be >= 0")
        if self.dwell_s > 0 and not self.dwell_period_s > self.dwell_s + 2 * self.ramp_s:
            raise ConfigError("dwell_period_s must exceed dwell_s + 2 * ramp_s")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.rate_hz))


@dataclass
class ContactConfig:
    """Probing session: slow wobble around ``probe_offset`` plus a force profile.

    ``profile`` is ``ramp_hold_release`` (X, Y, Z pushed one after another)
    or ``sinusoidal_push`` (all axes pushed with phase-shifted raised
    cosines). ``peak_force`` is per axis in newtons.
    """

    duration_s: float = 60.0
    rate_hz: float = 100.0
    profile: str = "ramp_hold_release"
    peak_force: float | list[float] = 10.0
    lead_s: float = 2.0
    ramp_s: float = 4.0
    hold_s: float = 8.0
    rest_s: float = 4.0
    push_freq_hz: float = 0.1
    probe_offset: list[float] = field(default_factory=lambda: [0.0] * 6)
    wobble_fraction: float | list[float] = 0.02
    wobble_freq_hz: float = 0.1
    seed: int = 1

    def validate(self, n_joints=6):
        if not self.duration_s > 0 or not self.rate_hz > 0:
            raise ConfigError("contact duration_s and rate_hz must be > 0")
        if self.profile not in ("ramp_hold_release", "sinusoidal_push"):
            raise ConfigError(f"unknown contact profile {self.profile!r}")
        _per_joint(self.peak_force, 3, "peak_force")
        if len(self.probe_offset) != n_joints:
            raise ConfigError(f"probe_offset needs {n_joints} values")
        if min(self.lead_s, self.ramp_s, self.hold_s, self.rest_s) < 0:
            raise ConfigError("contact segment durations must be >= 0")
        if self.profile == "ramp_hold_release":
            needed = self.lead_s + 3 * (2 * self.ramp_s + self.hold_s) + 2 * self.rest_s
            if needed > self.duration_s + 1e-9:
                raise ConfigError(
                    f"ramp_hold_release needs {needed:g} s but duration_s is {self.duration_s:g}"
                )

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.rate_hz))


@dataclass
class Trajectory:
    """Time-indexed joint states stored as arrays; indexing yields ``JointState``."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> JointState:
        return JointState(float(self.t[i]), self.q[i].copy(), self.qd[i].copy())

    def __iter__(self) -> Iterator[JointState]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_states(cls, states: Sequence[JointState]) -> "Trajectory":
        states = list(states)
        return cls(
            np.array([s.t for s in states], dtype=float),
            np.array([s.q for s in states], dtype=float).reshape(len(states), -1),
            np.array([s.qd for s in states], dtype=float).reshape(len(states), -1),
        )


def _time_warp(t, period, dwell, ramp):
    """Warped time s(t) and its rate s'(t) in [0, 1]; s' is exactly 0 during dwells."""
    if dwell <= 0:
        return t.copy(), np.ones_like(t)
    n, u = np.divmod(t, period)
    move = period - dwell - ramp
    s = n * move
    rate = np.zeros_like(t)
    up = (u >= dwell) & (u < dwell + ramp)
    full = (u >= dwell + ramp) & (u < period - ramp)
    down = u >= period - ramp
    if ramp > 0:
        v = u[up] - dwell
        rate[up] = 0.5 * (1 - np.cos(np.pi * v / ramp))
        s[up] += 0.5 * (v - ramp / np.pi * np.sin(np.pi * v / ramp))
        v = u[down] - (period - ramp)
        rate[down] = 0.5 * (1 + np.cos(np.pi * v / ramp))
        s[down] += ramp / 2 + (period - 2 * ramp - dwell) + 0.5 * (v + ramp / np.pi * np.sin(np.pi * v / ramp))
    rate[full] = 1.0
    s[full] += ramp / 2 + (u[full] - dwell - ramp)
    return s, rate


def generate_freespace_trajectory(chain: KinematicChain, cfg: TrajectoryConfig) -> Trajectory:
    cfg.validate(chain.n_joints)
    n_j = chain.n_joints
    rng = np.random.default_rng(cfg.seed)
    harmonics = np.broadcast_to(np.asarray(cfg.n_harmonics, dtype=int), (n_j,))
    amp_frac = _per_joint(cfg.amplitude_fraction, n_j)
    vmax = _per_joint(cfg.max_velocity, n_j)
    lo, hi = chain.joint_limits.T
    mid, half = (lo + hi) / 2, (hi - lo) / 2

    t = np.arange(cfg.n_samples) / cfg.rate_hz
    s, rate = _time_warp(t, cfg.dwell_period_s, cfg.dwell_s, cfg.ramp_s)
    q = np.tile(mid, (len(t), 1))
    qd = np.zeros_like(q)
    f_lo, f_hi = cfg.freq_range_hz
    for i in range(n_j):
        k = int(harmonics[i])
        if k == 0:
            continue
        weights = rng.uniform(0.2, 1.0, k)
        amps = amp_frac[i] * half[i] * weights / weights.sum()
        omega = 2 * np.pi * rng.uniform(f_lo, f_hi, k)
        phase = rng.uniform(0, 2 * np.pi, k)
        # slow the harmonics down until the summed peak speed fits the budget
        peak_speed = float(np.sum(amps * omega))
        if peak_speed > vmax[i]:
            omega *= vmax[i] / peak_speed
        arg = np.outer(s, omega) + phase
        q[:, i] += np.sin(arg) @ amps
        qd[:, i] = rate * (np.cos(arg) @ (amps * omega))
    return Trajectory(t, q, qd)


def contact_wrench_profile(cfg: ContactConfig) -> np.ndarray:
    """Ground-truth tip wrench series (n, 6); only force components are nonzero."""
    cfg.validate()
    t = np.arange(cfg.n_samples) / cfg.rate_hz
    peak = _per_joint(cfg.peak_force, 3)
    W = np.zeros((len(t), 6))
    if cfg.profile == "ramp_hold_release":
        start = cfg.lead_s
        for axis in range(3):
            up_end = start + cfg.ramp_s
            hold_end = up_end + cfg.hold_s
            down_end = hold_end + cfg.ramp_s
            level = np.zeros_like(t)
            if cfg.ramp_s > 0:
                level = np.clip((t - start) / cfg.ramp_s, 0, 1)
                level = np.minimum(level, np.clip((down_end - t) / cfg.ramp_s, 0, 1))
            else:
                level = ((t >= start) & (t < down_end)).astype(float)
            W[:, axis] = peak[axis] * level
            start = down_end + cfg.rest_s
    else:
        period = 1.0 / cfg.push_freq_hz
        for axis in range(3):
            # shift by whole samples so every axis actually reaches its peak on the grid
            shift = round(axis * period / 3 * cfg.rate_hz) / cfg.rate_hz
            W[:, axis] = 0.5 * peak[axis] * (1 - np.cos(2 * np.pi * cfg.push_freq_hz * (t - shift)))
    return W


def generate_contact_trajectory(chain: KinematicChain, cfg: ContactConfig) -> tuple[Trajectory, np.ndarray]:
    """Slow wobble near the probing pose together with the contact wrench series."""
    cfg.validate(chain.n_joints)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = chain.joint_limits.T
    probe = chain.mid_configuration + np.asarray(cfg.probe_offset, dtype=float)
    amp = _per_joint(cfg.wobble_fraction, chain.n_joints) * (hi - lo) / 2
    if np.any(probe - amp < lo) or np.any(probe + amp > hi):
        raise ConfigError("probing pose plus wobble leaves the joint limits")
    t = np.arange(cfg.n_samples) / cfg.rate_hz
    w = 2 * np.pi * cfg.wobble_freq_hz
    phase = rng.uniform(0, 2 * np.pi, chain.n_joints)
    arg = w * t[:, None] + phase
    q = probe + amp * np.sin(arg)
    qd = amp * w * np.cos(arg)
    return Trajectory(t, q, qd), contact_wrench_profile(cfg)


def split_sizes(n: int) -> tuple[int, int, int]:
    """Chronological 80/10/10 split sizes, each within one sample of its share."""
    n_train = int(math.floor(SPLIT_FRACTIONS[0] * n + 0.5))
    n_val = int(math.floor(SPLIT_FRACTIONS[1] * n + 0.5))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def make_partition(n: int) -> dict[str, tuple[int, int]]:
    a, b, _ = split_sizes(n)
    return {"train": (0, a), "val": (a, a + b), "test": (a + b, n)}


@dataclass
class Sample:
    state: JointState
    tau_measured: np.ndarray
    tau_free_truth: np.ndarray
    contact_wrench_truth: Wrench | None
    jacobian: np.ndarray


@dataclass
class Dataset:
    """Column-oriented sample store. ``partition`` maps split name to ``[start, stop)``."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tau_measured: np.ndarray
    tau_free: np.ndarray
    wrench: np.ndarray
    has_contact: np.ndarray
    jacobian: np.ndarray
    rate_hz: float
    partition: dict[str, tuple[int, int]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Sample:
        return Sample(
            JointState(float(self.t[i]), self.q[i].copy(), self.qd[i].copy()),
            self.tau_measured[i].copy(),
            self.tau_free[i].copy(),
            Wrench.from_vector(self.wrench[i]) if self.has_contact[i] else None,
            self.jacobian[i].copy(),
        )

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def features(self) -> np.ndarray:
        """The 12-dim (q, qd) vector per sample."""
        return np.hstack([self.q, self.qd])

    def split(self, name: str) -> slice:
        a, b = self.partition[name]
        return slice(a, b)

    def rows(self, start: int, stop: int, **meta) -> "Dataset":
        """Contiguous rows ``[start, stop)`` as a new dataset with its own 80/10/10 partition."""
        sl = slice(start, stop)
        return Dataset(
            self.t[sl], self.q[sl], self.qd[sl], self.tau_measured[sl], self.tau_free[sl],
            self.wrench[sl], self.has_contact[sl], self.jacobian[sl], self.rate_hz,
            make_partition(len(self.t[sl])), dict(self.meta, **meta),
        )

    def subset(self, name: str) -> "Dataset":
        a, b = self.partition[name]
        return self.rows(a, b, split=name)

    def equals(self, other: "Dataset") -> bool:
        arrays = ("t", "q", "qd", "tau_measured", "tau_free", "wrench", "has_contact", "jacobian")
        same = all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        return (
            same
            and self.rate_hz == other.rate_hz
            and {k: tuple(v) for k, v in self.partition.items()} == {k: tuple(v) for k, v in other.partition.items()}
            and self.meta == other.meta
        )


def build_dataset(
    chain: KinematicChain,
    sensor: SensorModel,
    states: Trajectory | Sequence[JointState],
    contacts: np.ndarray | Sequence[Wrench | None] | None = None,
    rate_hz: float | None = None,
    meta: dict | None = None,
) -> Dataset:
    """Simulate sensor readings over a trajectory and apply the 80/10/10 split."""
    traj = states if isinstance(states, Trajectory) else Trajectory.from_states(states)
    n = len(traj)
    if n == 0:
        raise ValueError("cannot build a dataset from an empty trajectory")
    if n > 1 and not np.all(np.diff(traj.t) > 0):
        raise ValueError("states must be strictly increasing in time")
    if rate_hz is None:
        rate_hz = 1.0 / float(np.median(np.diff(traj.t))) if n > 1 else 1.0
    wrench = np.zeros((n, 6))
    has_contact = np.zeros(n, dtype=bool)
    if contacts is not None:
        if isinstance(contacts, np.ndarray):
            wrench = np.asarray(contacts, dtype=float).reshape(n, 6).copy()
            has_contact[:] = True
        else:
            contacts = list(contacts)
            if len(contacts) != n:
                raise ValueError("contacts must align with states")
            for i, w in enumerate(contacts):
                if w is not None:
                    wrench[i] = w.as_vector() if isinstance(w, Wrench) else w
                    has_contact[i] = True
    if not np.all(np.isfinite(wrench)):
        raise ValueError("contact wrench must be finite")
    J = jacobian(chain, traj.q)
    tau_free = freespace_torque_batch(chain, traj.q, traj.qd)
    tau_clean = tau_free + np.einsum("nji,nj->ni", J, wrench)
    tau_meas = sensor_series(sensor, tau_clean, 1.0 / rate_hz)
    info = {"bias_kind": sensor.bias_kind, "sensor_seed": sensor.seed}
    info.update(meta or {})
    return Dataset(
        traj.t.copy(), traj.q.copy(), traj.qd.copy(), tau_meas, tau_free, wrench,
        has_contact, J, float(rate_hz), make_partition(n), info,
    )


def csv_columns(n_joints: int = 6) -> list[str]:
    cols = ["t"]
    cols += [f"q{i + 1}" for i in range(n_joints)]
    cols += [f"qd{i + 1}" for i in range(n_joints)]
    cols += [f"tau_meas{i + 1}" for i in range(n_joints)]
    cols += [f"tau_free{i + 1}" for i in range(n_joints)]
    cols += list(AXES)
    cols += [f"J{r + 1}{c + 1}" for r in range(6) for c in range(n_joints)]
    cols += ["has_contact"]
    return cols


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_csv(dataset: Dataset, path) -> Path:
    """Write one header row plus one row per sample; floats use repr (shortest exact form).

    Rate, partition and metadata go to a ``<name>.meta.json`` sidecar.
    """
    path = Path(path)
    n = len(dataset)
    block = np.hstack([
        dataset.t[:, None], dataset.q, dataset.qd, dataset.tau_measured, dataset.tau_free,
        dataset.wrench, dataset.jacobian.reshape(n, -1),
    ])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(csv_columns(dataset.q.shape[1])) + "\n")
        for row, flag in zip(block.tolist(), dataset.has_contact):
            fh.write(",".join(map(repr, row)) + ("," + ("1" if flag else "0")) + "\n")
    side = {
        "rate_hz": dataset.rate_hz,
        "partition": {k: list(v) for k, v in dataset.partition.items()},
        "meta": dataset.meta,
    }
    _sidecar(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def load_csv(path) -> Dataset:
    path = Path(path)
    cols = csv_columns()
    rows = []
    flags = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(path, 1, 1, "empty file") from None
        if header != cols:
            bad = next((i for i, (a, b) in enumerate(zip(header, cols)) if a != b), min(len(header), len(cols)))
            raise CsvParseError(path, 1, bad + 1, f"unexpected header (expected {len(cols)} columns starting {cols[:3]})")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(cols):
                raise CsvParseError(path, line_no, min(len(row), len(cols)) + 1,
                                    f"expected {len(cols)} columns, found {len(row)}")
            try:
                values = [float(v) for v in row[:-1]]
            except ValueError:
                col = next(i for i, v in enumerate(row[:-1]) if not _is_float(v))
                raise CsvParseError(path, line_no, col + 1, f"{cols[col]}: cannot parse {row[col]!r}") from None
            if row[-1] not in ("0", "1"):
                raise CsvParseError(path, line_no, len(cols), f"has_contact must be 0 or 1, got {row[-1]!r}")
            rows.append(values)
            flags.append(row[-1] == "1")
    if not rows:
        raise CsvParseError(path, 2, 1, "no data rows")
    data = np.array(rows)
    n = len(data)
    side_path = _sidecar(path)
    if side_path.exists():
        side = json.loads(side_path.read_text())
        rate = float(side["rate_hz"])
        partition = {k: tuple(v) for k, v in side["partition"].items()}
        meta = side["meta"]
    else:
        rate = 1.0 / float(np.median(np.diff(data[:, 0]))) if n > 1 else 1.0
        partition, meta = make_partition(n), {}
    return Dataset(
        data[:, 0].copy(), data[:, 1:7].copy(), data[:, 7:13].copy(), data[:, 13:19].copy(),
        data[:, 19:25].copy(), data[:, 25:31].copy(), np.array(flags, dtype=bool),
        data[:, 31:67].reshape(n, 6, 6).copy(), rate, partition, meta,
    )


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def trajectory_config_dict(cfg) -> dict:
    d = asdict(cfg)
    if "freq_range_hz" in d:
        d["freq_range_hz"] = list(d["freq_range_hz"])
    return d
