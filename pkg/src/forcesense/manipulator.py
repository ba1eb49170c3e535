"""Simulated 6-DoF surgical-style arm.

Standard DH kinematics, the tool-tip geometric Jacobian, a quasi-static
free-space torque model (gravity + viscous + Coulomb friction) and a joint
torque sensor with either a static or an Ornstein-Uhlenbeck drifting bias.

Batch helpers accept joint arrays of shape ``(..., n)`` so a whole trajectory
can be pushed through in one call; the single-configuration functions are thin
wrappers around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


@dataclass(frozen=True)
class Joint:
    kind: str
    a: float = 0.0
    alpha: float = 0.0
    d: float = 0.0
    theta_offset: float = 0.0

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"joint kind must be 'revolute' or 'prismatic', got {self.kind!r}")
        for name in ("a", "alpha", "d", "theta_offset"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"joint DH parameter {name} is not finite")


def _vec(values, n, name):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr


@dataclass
class KinematicChain:
    """Serial chain with standard DH parameters and lumped link inertia.

    ``link_coms`` are expressed in each link's own DH frame (the frame after
    the joint). ``gravity`` is the gravitational acceleration in the base
    frame, e.g. ``(0, 0, -9.81)``.
    """

    joints: tuple[Joint, ...]
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    link_masses: np.ndarray | None = None
    link_coms: np.ndarray | None = None
    viscous: np.ndarray | None = None
    coulomb: np.ndarray | None = None
    joint_limits: np.ndarray | None = None

    def __post_init__(self):
        self.joints = tuple(self.joints)
        n = len(self.joints)
        if n < 1:
            raise ValueError("a chain needs at least one joint")
        self.gravity = _vec(self.gravity, 3, "gravity")
        if not np.linalg.norm(self.gravity) > 0:
            raise ValueError("|gravity| must be > 0")
        self.link_masses = _vec(np.zeros(n) if self.link_masses is None else self.link_masses, n, "link_masses")
        coms = np.zeros((n, 3)) if self.link_coms is None else np.asarray(self.link_coms, dtype=float)
        if coms.shape != (n, 3):
            raise ValueError(f"link_coms must have shape ({n}, 3), got {coms.shape}")
        self.link_coms = coms
        self.viscous = _vec(np.zeros(n) if self.viscous is None else self.viscous, n, "viscous")
        self.coulomb = _vec(np.zeros(n) if self.coulomb is None else self.coulomb, n, "coulomb")
        if self.joint_limits is None:
            lim = np.tile([-np.pi, np.pi], (n, 1))
        else:
            lim = np.asarray(self.joint_limits, dtype=float)
        if lim.shape != (n, 2):
            raise ValueError(f"joint_limits must have shape ({n}, 2), got {lim.shape}")
        self.joint_limits = lim
        if np.any(self.link_masses < 0):
            raise ValueError("link masses must be >= 0")
        if np.any(self.viscous < 0) or np.any(self.coulomb < 0):
            raise ValueError("friction coefficients must be >= 0")
        if not np.all(lim[:, 0] < lim[:, 1]):
            raise ValueError("joint limits must satisfy lo < hi")
        for arr in (self.link_masses, self.link_coms, self.viscous, self.coulomb, self.joint_limits):
            if not np.all(np.isfinite(arr)):
                raise ValueError("chain parameters must be finite")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def prismatic_mask(self) -> np.ndarray:
        return np.array([j.kind == PRISMATIC for j in self.joints])

    def check_psm_layout(self) -> None:
        """Reject chains that do not match the 6-joint PSM-like layout (prismatic joint 3)."""
        if self.n_joints != 6:
            raise ValueError(f"expected exactly 6 joints, got {self.n_joints}")
        kinds = [j.kind for j in self.joints]
        expected = [REVOLUTE, REVOLUTE, PRISMATIC, REVOLUTE, REVOLUTE, REVOLUTE]
        if kinds != expected:
            raise ValueError(f"joint kinds must be {expected}, got {kinds}")

    @property
    def mid_configuration(self) -> np.ndarray:
        return self.joint_limits.mean(axis=1)


@dataclass
class JointState:
    t: float
    q: np.ndarray
    qd: np.ndarray


@dataclass
class Wrench:
    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        self.force = _vec(self.force, 3, "force")
        self.torque = _vec(self.torque, 3, "torque")
        if not (np.all(np.isfinite(self.force)) and np.all(np.isfinite(self.torque))):
            raise ValueError("wrench components must be finite")

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "Wrench":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:6])

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


STATIC = "static"
OU_DRIFT = "ou_drift"


@dataclass
class SensorModel:
    """Joint torque sensor: additive white noise plus a static or OU bias."""

    noise_sigma: np.ndarray = field(default_factory=lambda: np.zeros(6))
    bias_kind: str = STATIC
    static_bias: np.ndarray = field(default_factory=lambda: np.zeros(6))
    ou_theta: float = 1.0
    ou_sigma: float | np.ndarray = 0.0
    seed: int = 0

    def __post_init__(self):
        self.noise_sigma = np.asarray(self.noise_sigma, dtype=float)
        self.static_bias = np.asarray(self.static_bias, dtype=float)
        # a scalar drift intensity applies to every channel; a vector sets it per joint
        self.ou_sigma = np.asarray(self.ou_sigma, dtype=float)
        if self.ou_sigma.ndim > 1 or self.ou_sigma.size not in (1, self.static_bias.size):
            raise ValueError("ou_sigma must be a scalar or one value per joint")
        if self.bias_kind not in (STATIC, OU_DRIFT):
            raise ValueError(f"bias_kind must be 'static' or 'ou_drift', got {self.bias_kind!r}")
        if np.any(self.noise_sigma < 0):
            raise ValueError("noise_sigma must be >= 0")
        if self.bias_kind == OU_DRIFT and not self.ou_theta > 0:
            raise ValueError("ou_theta must be > 0 for ou_drift bias")
        if np.any(self.ou_sigma < 0):
            raise ValueError("ou_sigma must be >= 0")

    def initial_bias(self) -> np.ndarray:
        if self.bias_kind == STATIC:
            return self.static_bias.copy()
        return np.zeros_like(self.static_bias)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != chain.n_joints:
        raise ValueError(f"expected {chain.n_joints} joint values, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint configuration must be finite")
    return q


def dh_transform(a, alpha, d, theta) -> np.ndarray:
    """Standard DH link transform Rz(theta) Tz(d) Tx(a) Rx(alpha), broadcast over ``theta``/``d``."""
    theta, d = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(d, dtype=float))
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    T = np.zeros(theta.shape + (4, 4))
    T[..., 0, 0] = ct
    T[..., 0, 1] = -st * ca
    T[..., 0, 2] = st * sa
    T[..., 0, 3] = a * ct
    T[..., 1, 0] = st
    T[..., 1, 1] = ct * ca
    T[..., 1, 2] = -ct * sa
    T[..., 1, 3] = a * st
    T[..., 2, 1] = sa
    T[..., 2, 2] = ca
    T[..., 2, 3] = d
    T[..., 3, 3] = 1.0
    return T


def link_frames(chain: KinematicChain, q) -> np.ndarray:
    """Base-to-frame transforms for frames 0..n; shape ``(..., n+1, 4, 4)``."""
    q = _check_q(chain, q)
    batch = q.shape[:-1]
    frames = np.empty(batch + (chain.n_joints + 1, 4, 4))
    frames[..., 0, :, :] = np.eye(4)
    T = np.broadcast_to(np.eye(4), batch + (4, 4))
    for i, j in enumerate(chain.joints):
        if j.kind == REVOLUTE:
            A = dh_transform(j.a, j.alpha, j.d, q[..., i] + j.theta_offset)
        else:
            A = dh_transform(j.a, j.alpha, j.d + q[..., i], np.full(batch, j.theta_offset))
        T = T @ A
        frames[..., i + 1, :, :] = T
    return frames


def forward_kinematics(chain: KinematicChain, q) -> np.ndarray:
    return link_frames(chain, q)[..., -1, :, :]


def _point_jacobian(chain, frames, point, upto):
    """Linear/angular Jacobian of ``point`` attached to link ``upto`` (columns > upto are zero)."""
    n = chain.n_joints
    batch = frames.shape[:-3]
    J = np.zeros(batch + (6, n))
    for i in range(min(upto + 1, n)):
        z = frames[..., i, :3, 2]
        if chain.joints[i].kind == REVOLUTE:
            o = frames[..., i, :3, 3]
            J[..., :3, i] = np.cross(z, point - o)
            J[..., 3:, i] = z
        else:
            J[..., :3, i] = z
    return J


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """Geometric Jacobian at the tool tip, base frame, rows (v, omega)."""
    frames = link_frames(chain, q)
    return _point_jacobian(chain, frames, frames[..., -1, :3, 3], chain.n_joints - 1)


def jacobian_condition(J) -> float:
    return float(np.linalg.cond(J))


def com_positions(chain: KinematicChain, frames) -> np.ndarray:
    """World positions of link centres of mass, shape ``(..., n, 3)``."""
    R = frames[..., 1:, :3, :3]
    p = frames[..., 1:, :3, 3]
    return np.einsum("...ij,...j->...i", R, chain.link_coms) + p


def potential_energy(chain: KinematicChain, q) -> np.ndarray:
    frames = link_frames(chain, q)
    com = com_positions(chain, frames)
    return -np.einsum("...i,i->...", com @ chain.gravity, chain.link_masses)


def gravity_torque(chain: KinematicChain, q) -> np.ndarray:
    """Joint torques holding the arm against gravity, i.e. the gradient of potential energy."""
    frames = link_frames(chain, q)
    com = com_positions(chain, frames)
    tau = np.zeros(np.shape(q))
    for i in range(chain.n_joints):
        if chain.link_masses[i] == 0.0:
            continue
        Jv = _point_jacobian(chain, frames, com[..., i, :], i)[..., :3, :]
        tau -= chain.link_masses[i] * np.einsum("...ij,i->...j", Jv, chain.gravity)
    return tau


def friction_torque(chain: KinematicChain, qd) -> np.ndarray:
    qd = np.asarray(qd, dtype=float)
    return chain.viscous * qd + chain.coulomb * np.sign(qd)


def freespace_torque(chain: KinematicChain, state: JointState) -> np.ndarray:
    return freespace_torque_batch(chain, state.q, state.qd)


def freespace_torque_batch(chain: KinematicChain, q, qd) -> np.ndarray:
    q = _check_q(chain, q)
    qd = _check_q(chain, qd)
    return gravity_torque(chain, q) + friction_torque(chain, qd)


def measured_torque(
    chain: KinematicChain,
    state: JointState,
    sensor: SensorModel,
    contact: Wrench | None,
    bias_state: np.ndarray,
    rng: np.random.Generator,
    dt: float,
    jac: np.ndarray | None = None,
) -> np.ndarray:
    """One sensor reading; ``bias_state`` is advanced in place for OU drift.

    The contact wrench is the one the tool exerts on the environment, so it
    enters the joint torques as ``J^T F``. The bias added is the value held
    before this step's drift increment.
    """
    tau = freespace_torque(chain, state)
    if contact is not None:
        w = contact.as_vector() if isinstance(contact, Wrench) else np.asarray(contact, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("contact wrench must be finite")
        J = jacobian(chain, state.q) if jac is None else jac
        tau = tau + J.T @ w
    return sensor_series(sensor, tau[None, :], dt, bias_state=bias_state, rng=rng)[0]


def sensor_series(
    sensor: SensorModel,
    tau_clean: np.ndarray,
    dt: float,
    bias_state: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Vectorized ``measured_torque`` over a sequence of noise-free torques.

    Consumes the random stream in the same order as repeated
    ``measured_torque`` calls (noise then drift increment per step), so the
    two paths give bit-identical readings for the same seed.
    """
    tau_clean = np.asarray(tau_clean, dtype=float)
    n, m = tau_clean.shape
    rng = sensor.rng() if rng is None else rng
    b = sensor.initial_bias() if bias_state is None else bias_state
    noisy = bool(np.any(sensor.noise_sigma > 0))
    drifting = sensor.bias_kind == OU_DRIFT
    width = m * (int(noisy) + int(drifting))
    draws = rng.standard_normal((n, width)) if width else np.empty((n, 0))
    if drifting:
        if sensor.ou_theta * dt > 1.0:
            raise ValueError(f"ou_theta * dt = {sensor.ou_theta * dt:g} > 1 makes the bias recursion unstable")
        eta = draws[:, m * int(noisy):]
        path = np.empty((n, m))
        step = sensor.ou_sigma * np.sqrt(dt)
        for k in range(n):
            path[k] = b
            b += -sensor.ou_theta * b * dt + step * eta[k]
        out = tau_clean + path
    else:
        out = tau_clean + b
    if noisy:
        out = out + sensor.noise_sigma * draws[:, :m]
    return out


def reference_chain() -> KinematicChain:
    """PSM-like stand-in: yaw/pitch shoulder, prismatic insertion, spherical wrist.

    The shoulder axes intersect (a remote-centre-like pivot), the wrist axes
    intersect 2 cm behind the tool tip. Lengths in metres, masses in kg.
    """
    joints = (
        Joint(REVOLUTE, a=0.0, alpha=np.pi / 2, d=0.0, theta_offset=np.pi / 2),
        Joint(REVOLUTE, a=0.0, alpha=-np.pi / 2, d=0.0, theta_offset=-np.pi / 2),
        Joint(PRISMATIC, a=0.0, alpha=0.0, d=0.0, theta_offset=0.0),
        Joint(REVOLUTE, a=0.0, alpha=-np.pi / 2, d=0.0, theta_offset=0.0),
        # wrist pitch offset keeps the roll/yaw axes apart inside the limits
        Joint(REVOLUTE, a=0.0, alpha=np.pi / 2, d=0.0, theta_offset=np.pi / 2),
        Joint(REVOLUTE, a=0.0, alpha=0.0, d=0.02, theta_offset=0.0),
    )
    return KinematicChain(
        joints=joints,
        gravity=np.array([0.0, -9.81, 0.0]),
        link_masses=np.array([0.6, 0.5, 0.3, 0.05, 0.025, 0.015]),
        link_coms=np.array([
            [0.0, 0.0, 0.05],
            [0.0, 0.0, 0.08],
            [0.0, 0.0, -0.05],
            [0.0, 0.0, 0.0],
            [-0.03, 0.0, 0.0],
            [-0.02, 0.0, 0.0],
        ]),
        viscous=np.array([0.05, 0.05, 0.5, 0.01, 0.01, 0.01]),
        coulomb=np.array([0.02, 0.02, 0.1, 0.005, 0.005, 0.005]),
        joint_limits=np.array([
            [-1.0, 1.0],
            [-0.8, 0.8],
            [0.10, 0.24],
            [-1.5, 1.5],
            [-1.2, 1.2],
            [-1.2, 1.2],
        ]),
    )
