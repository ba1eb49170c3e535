"""External wrench from residual joint torque through the inverse-transpose Jacobian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .manipulator import Wrench

METHOD_TAGS = ("nn", "measure_only", "bias", "vector_search")


class SingularJacobianError(np.linalg.LinAlgError):
    def __init__(self, condition: float, message: str = ""):
        self.condition = condition
        super().__init__(message or f"Jacobian too ill-conditioned (condition ~ {condition:.3g})")


@dataclass(frozen=True)
class SolvePolicy:
    """``exact`` solves J^T F = tau_ext; ``damped`` solves the Tikhonov problem.

    With ``fallback`` set, an exact solve that trips ``kappa_max`` is retried
    damped with lambda = ``damping_scale * ||J||_F`` instead of raising.
    """

    kind: str = "exact"
    kappa_max: float = 1e8
    damping: float | None = None
    damping_scale: float = 1e-6
    fallback: bool = False

    def __post_init__(self):
        if self.kind not in ("exact", "damped"):
            raise ValueError(f"policy kind must be 'exact' or 'damped', got {self.kind!r}")
        if not self.kappa_max >= 1:
            raise ValueError("kappa_max must be >= 1")

    def lam(self, J: np.ndarray) -> float:
        if self.damping is not None:
            return float(self.damping)
        return self.damping_scale * float(np.linalg.norm(J))


@dataclass
class WrenchEstimate:
    wrench: Wrench | None
    residual_torque: np.ndarray
    jacobian_condition: float
    method_tag: str
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _lu_condition(J: np.ndarray):
    """LU factors of J^T and a 1-norm condition estimate from them."""
    A = J.T
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    if np.any(np.diag(lu) == 0):
        return lu, piv, np.inf
    rcond = scipy.linalg.lapack.dgecon(lu, np.linalg.norm(A, 1), norm="1")[0]
    return lu, piv, (np.inf if rcond == 0 else 1.0 / rcond)


def _damped(J, tau_ext, lam):
    A = J @ J.T + lam * lam * np.eye(J.shape[0])
    return np.linalg.solve(A, J @ tau_ext)


def estimate_wrench(J, tau, tau_hat, policy: SolvePolicy = SolvePolicy(), method_tag: str = "nn") -> WrenchEstimate:
    J = np.asarray(J, dtype=float)
    tau = np.asarray(tau, dtype=float)
    tau_hat = np.asarray(tau_hat, dtype=float)
    if J.shape != (6, 6) or not np.all(np.isfinite(J)):
        raise ValueError("J must be a finite 6x6 matrix")
    residual = tau - tau_hat
    lu, piv, cond = _lu_condition(J)
    cond = max(cond, 1.0)
    if policy.kind == "exact" and cond <= policy.kappa_max:
        F = scipy.linalg.lu_solve((lu, piv), residual, check_finite=False)
    elif policy.kind == "exact" and not policy.fallback:
        raise SingularJacobianError(cond)
    else:
        F = _damped(J, residual, policy.lam(J))
    return WrenchEstimate(Wrench.from_vector(F), residual, float(cond), method_tag)


def estimate_series(predictor, dataset, policy: SolvePolicy = SolvePolicy()):
    """Apply ``estimate_wrench`` at every timestep with the predictor's torque estimates.

    Returns ``(estimates, wrench_matrix, available)``: a list with one
    ``WrenchEstimate`` per step (status ``unavailable`` during the predictor's
    warm-up, ``singular`` if the solve was refused), the (n, 6) wrench array
    with NaN rows where no estimate exists, and the boolean mask of valid rows.
    """
    tau_hat, available = predictor.predict_series(dataset)
    tag = predictor.method_tag
    n = len(dataset)
    out = []
    F = np.full((n, 6), np.nan)
    ok = np.zeros(n, dtype=bool)
    for i in range(n):
        if not available[i]:
            out.append(WrenchEstimate(None, np.full(6, np.nan), np.inf, tag, "unavailable"))
            continue
        try:
            est = estimate_wrench(dataset.jacobian[i], dataset.tau_measured[i], tau_hat[i], policy, tag)
        except SingularJacobianError as exc:
            out.append(WrenchEstimate(None, dataset.tau_measured[i] - tau_hat[i], exc.condition, tag, "singular"))
            continue
        out.append(est)
        F[i] = est.wrench.as_vector()
        ok[i] = True
    return out, F, ok
