"""Run configuration: strict JSON parsing, seed derivation and fingerprinting."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import ConfigError, ContactConfig, TrajectoryConfig
from .estimator import SolvePolicy
from .manipulator import Joint, KinematicChain, SensorModel, reference_chain
from .predictor import PredictorConfig

PROFILES = ("classic", "si")
METHODS = ("measure_only", "bias", "vector_search", "nn")
SEED_ENV = "FORCESENSE_SEED"


def _chain_dict(chain: KinematicChain) -> dict:
    return {
        "joints": [dataclasses.asdict(j) for j in chain.joints],
        "gravity": chain.gravity.tolist(),
        "link_masses": chain.link_masses.tolist(),
        "link_coms": chain.link_coms.tolist(),
        "viscous": chain.viscous.tolist(),
        "coulomb": chain.coulomb.tolist(),
        "joint_limits": chain.joint_limits.tolist(),
    }


def default_config() -> dict:
    """Desk-scale benchmark defaults: 600 s free-space pool, 60 s probing, 100 Hz."""
    return {
        "seed": 7,
        "output_dir": "runs/default",
        "methods": list(METHODS),
        "chain": _chain_dict(reference_chain()),
        "sensors": {
            "classic": {
                "noise_sigma": [0.01, 0.01, 0.04, 0.004, 0.004, 0.004],
                "bias_kind": "static",
                "static_bias": [0.05, -0.04, 0.3, 0.01, -0.01, 0.005],
                "ou_theta": 1.0,
                "ou_sigma": 0.0,
            },
            "si": {
                "noise_sigma": [0.01, 0.01, 0.04, 0.004, 0.004, 0.004],
                "bias_kind": "ou_drift",
                "static_bias": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                "ou_theta": 100.0,
                "ou_sigma": 2.83,
            },
        },
        "freespace": {
            "duration_s": 600.0,
            "rate_hz": 100.0,
            "n_harmonics": 3,
            "amplitude_fraction": 0.8,
            "max_velocity": 0.6,
            "freq_range_hz": [0.02, 0.25],
            "dwell_period_s": 20.0,
            "dwell_s": 2.0,
            "ramp_s": 1.0,
        },
        "contact": {
            "duration_s": 60.0,
            "rate_hz": 100.0,
            "profile": "ramp_hold_release",
            "peak_force": [30.0, 30.0, 30.0],
            "lead_s": 2.0,
            "ramp_s": 4.0,
            "hold_s": 8.0,
            "rest_s": 4.0,
            "push_freq_hz": 0.1,
            "probe_offset": [0.2, 0.45, 0.02, 0.3, 0.4, -0.2],
            "wobble_fraction": 0.02,
            "wobble_freq_hz": 0.1,
        },
        "predictor": {
            "input_dim": 12,
            "hidden_dim": 16,
            "window_len": 10,
            "lr": 3e-3,
            "betas": [0.9, 0.999],
            "eps": 1e-8,
            "batch_size": 64,
            "max_epochs": 30,
            "early_stop_patience": 5,
        },
        "baselines": {"velocity_eps": 1e-3, "k": 4},
        "estimator": {"kind": "exact", "kappa_max": 1e8, "damping_scale": 1e-6, "fallback": True},
    }


_SECTION_KEYS = {
    "chain": {"joints", "gravity", "link_masses", "link_coms", "viscous", "coulomb", "joint_limits"},
    "sensor": {"noise_sigma", "bias_kind", "static_bias", "ou_theta", "ou_sigma"},
    "freespace": {f.name for f in dataclasses.fields(TrajectoryConfig)} - {"seed"},
    "contact": {f.name for f in dataclasses.fields(ContactConfig)} - {"seed"},
    "predictor": {f.name for f in dataclasses.fields(PredictorConfig)} - {"seed"},
    "baselines": {"velocity_eps", "k"},
    "estimator": {"kind", "kappa_max", "damping_scale", "fallback"},
    "joint": {"kind", "a", "alpha", "d", "theta_offset"},
}
_TOP_KEYS = {"seed", "output_dir", "methods", "chain", "sensors", "freespace", "contact", "predictor",
              "baselines", "estimator"}


def _check_keys(d, allowed, where, required=True):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    if required:
        missing = sorted(allowed - set(d))
        if missing:
            raise ConfigError(f"{where}: missing key(s) {missing}")


def derive_seed(seed: int, *tags) -> int:
    words = [int(seed)] + [int.from_bytes(hashlib.sha256(str(t).encode()).digest()[:4], "little") for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class RunConfig:
    raw: dict

    @classmethod
    def from_dict(cls, d: dict, env: dict | None = None) -> "RunConfig":
        d = copy.deepcopy(d)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                d["seed"] = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        cfg = cls(d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, env: dict | None = None) -> "RunConfig":
        if path is None:
            return cls.from_dict(default_config(), env)
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d, env)

    def validate(self):
        d = self.raw
        _check_keys(d, _TOP_KEYS, "config")
        if not isinstance(d["seed"], int):
            raise ConfigError("seed: must be an integer")
        bad = [m for m in d["methods"] if m not in METHODS]
        if bad or not d["methods"]:
            raise ConfigError(f"methods: unknown or empty {bad} (choose from {list(METHODS)})")
        _check_keys(d["chain"], _SECTION_KEYS["chain"], "chain")
        for i, j in enumerate(d["chain"]["joints"]):
            _check_keys(j, _SECTION_KEYS["joint"], f"chain.joints[{i}]", required=False)
        _check_keys(d["sensors"], set(PROFILES), "sensors")
        for p in PROFILES:
            _check_keys(d["sensors"][p], _SECTION_KEYS["sensor"], f"sensors.{p}")
        for sec in ("freespace", "contact", "predictor", "baselines", "estimator"):
            _check_keys(d[sec], _SECTION_KEYS[sec], sec, required=False)
        # build everything once so value errors surface with a field name
        for name, build in (("chain", self.chain), ("freespace", self.freespace),
                            ("contact", self.contact), ("predictor", self.predictor),
                            ("estimator", self.policy)):
            try:
                obj = build()
                if name == "chain":
                    obj.check_psm_layout()
                elif hasattr(obj, "validate"):
                    obj.validate()
            except ConfigError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{name}: {exc}") from None
        for p in PROFILES:
            try:
                sensor = self.sensor(p, "freespace")
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"sensors.{p}: {exc}") from None
            if sensor.bias_kind == "ou_drift":
                for sec in ("freespace", "contact"):
                    rate = float(d[sec].get("rate_hz", 100.0))
                    if sensor.ou_theta / rate > 1.0:
                        raise ConfigError(
                            f"sensors.{p}.ou_theta: {sensor.ou_theta} 1/s is too fast for {sec}.rate_hz={rate}; "
                            f"the Euler-Maruyama bias step needs ou_theta <= rate_hz")
        b = d["baselines"]
        if "k" in b and (not isinstance(b["k"], int) or b["k"] < 1):
            raise ConfigError("baselines.k: must be an integer >= 1")
        if "velocity_eps" in b and not b["velocity_eps"] > 0:
            raise ConfigError("baselines.velocity_eps: must be > 0")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def methods(self) -> list[str]:
        return list(self.raw["methods"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    @property
    def k(self) -> int:
        return int(self.raw["baselines"].get("k", 4))

    @property
    def velocity_eps(self) -> float:
        return float(self.raw["baselines"].get("velocity_eps", 1e-3))

    def chain(self) -> KinematicChain:
        c = self.raw["chain"]
        return KinematicChain(
            joints=tuple(Joint(**j) for j in c["joints"]),
            gravity=c["gravity"], link_masses=c["link_masses"], link_coms=c["link_coms"],
            viscous=c["viscous"], coulomb=c["coulomb"], joint_limits=c["joint_limits"],
        )

    def sensor(self, profile: str, role: str) -> SensorModel:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {list(PROFILES)}")
        s = self.raw["sensors"][profile]
        return SensorModel(
            noise_sigma=s["noise_sigma"], bias_kind=s["bias_kind"], static_bias=s["static_bias"],
            ou_theta=float(s["ou_theta"]), ou_sigma=s["ou_sigma"],
            seed=derive_seed(self.seed, "sensor", profile, role),
        )

    def freespace(self) -> TrajectoryConfig:
        f = dict(self.raw["freespace"])
        if "freq_range_hz" in f:
            f["freq_range_hz"] = tuple(f["freq_range_hz"])
        return TrajectoryConfig(**f, seed=derive_seed(self.seed, "freespace"))

    def contact(self) -> ContactConfig:
        return ContactConfig(**self.raw["contact"], seed=derive_seed(self.seed, "contact"))

    def predictor(self) -> PredictorConfig:
        p = dict(self.raw["predictor"])
        if "betas" in p:
            p["betas"] = tuple(p["betas"])
        return PredictorConfig(**p, seed=derive_seed(self.seed, "predictor"))

    def policy(self) -> SolvePolicy:
        return SolvePolicy(**self.raw["estimator"])

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def seeds(self) -> dict:
        return {
            "global": self.seed,
            "freespace": self.freespace().seed,
            "contact": self.contact().seed,
            "predictor": self.predictor().seed,
            **{f"sensor_{p}_{r}": self.sensor(p, r).seed for p in PROFILES for r in ("freespace", "contact")},
        }
