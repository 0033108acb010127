"""State estimators for the numerical substructure: Kalman filter,
extended Kalman filter, and the adaptive extended Kalman filter whose
innovation-driven covariance matching re-estimates the process and
measurement noise statistics online.

All steps are pure functions over immutable value objects; a filter
trajectory is a fold of ``*_step`` over the measurement stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

# Eigenvalue floor applied to every covariance matrix after the update
# and matching recursions, whose subtraction terms can otherwise produce
# indefinite matrices.
PSD_FLOOR = 1e-12

DEFAULT_FORGETTING_FACTOR = 0.96


class FilterNumericalError(RuntimeError):
    """Non-finite or degenerate quantity inside a filter step."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _eye(n: int) -> np.ndarray:
    # Shared read-only identities; callers must not mutate.
    I = _EYE_CACHE.get(n)
    if I is None:
        I = np.eye(n)
        I.setflags(write=False)
        _EYE_CACHE[n] = I
    return I


_EYE_CACHE: dict[int, np.ndarray] = {}


def floor_spd(M: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """Symmetrize and clamp eigenvalues of M from below.

    Closed forms handle the 1x1 and 2x2 cases that dominate the per-step
    cost; larger matrices go through an eigendecomposition.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    n = M.shape[0]
    if n == 1:
        return M if M[0, 0] >= floor else np.array([[floor]])
    if n == 2:
        a, b, c = M[0, 0], M[0, 1], M[1, 1]
        mean = 0.5 * (a + c)
        disc = np.hypot(0.5 * (a - c), b)
        lo = mean - disc
        if lo >= floor:
            return M
        hi = max(mean + disc, floor)
        lo = floor
        if abs(b) < 1e-300:
            return np.array([[max(a, floor), 0.0], [0.0, max(c, floor)]])
        # Eigenvector for the smaller eigenvalue of [[a, b], [b, c]].
        v = np.array([b, (mean - disc) - a])
        v /= np.hypot(v[0], v[1])
        w = np.array([-v[1], v[0]])
        out = lo * np.outer(v, v) + hi * np.outer(w, w)
        return symmetrize(out)
    w, V = np.linalg.eigh(M)
    if w[0] >= floor:
        return M
    w = np.maximum(w, floor)
    return symmetrize((V * w) @ V.T)


def _inv_small(S: np.ndarray) -> np.ndarray:
    """Inverse of a small innovation covariance, raising on singularity."""
    n = S.shape[0]
    if n == 1:
        s = S[0, 0]
        if s == 0.0 or not np.isfinite(s):
            raise FilterNumericalError("singular innovation covariance")
        return np.array([[1.0 / s]])
    if n == 2:
        det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
        if det == 0.0 or not np.isfinite(det):
            raise FilterNumericalError("singular innovation covariance")
        return np.array([[S[1, 1], -S[0, 1]], [-S[1, 0], S[0, 0]]]) / det
    try:
        return np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise FilterNumericalError(f"singular innovation covariance: {exc}") from exc


@dataclass(frozen=True)
class NoiseStats:
    """First and second moments of the process (q, Q) and measurement
    (r, R) noises carried by a filter."""

    q: np.ndarray
    Q: np.ndarray
    r: np.ndarray
    R: np.ndarray

    @staticmethod
    def diagonal(
        n_states: int,
        n_obs: int,
        q_var: float,
        r_var: float,
        q_mean: float = 0.0,
        r_mean: float = 0.0,
    ) -> "NoiseStats":
        return NoiseStats(
            q=np.full(n_states, q_mean, dtype=float),
            Q=np.eye(n_states) * q_var,
            r=np.full(n_obs, r_mean, dtype=float),
            R=np.eye(n_obs) * r_var,
        )


@dataclass(frozen=True)
class FilterState:
    """Posterior estimate after k measurement updates."""

    x: np.ndarray
    P: np.ndarray
    noise: NoiseStats
    k: int = 0


@dataclass(frozen=True)
class TransitionModel:
    """One-step transition/observation maps with their Jacobian providers.

    ``propagate(x, u)`` advances the state over one sampling interval
    under a zero-order-hold input; ``jac_transition(x, u)`` is the
    Jacobian of that discrete map.  The observation is
    ``observe(x)`` with Jacobian ``jac_observation(x)``.  Noise enters
    additively by default (W = V = identity).
    """

    n_states: int
    n_obs: int
    propagate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    observe: Callable[[np.ndarray], np.ndarray]
    jac_transition: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_observation: Callable[[np.ndarray], np.ndarray]
    W: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    # True when the observation is H @ x with a CONSTANT H (so
    # jac_observation ignores its argument); lets the update and the
    # fused single-DOF kernel skip the observe() indirection.
    linear_observation: bool = False

    def noise_jacobians(self) -> tuple[np.ndarray, np.ndarray]:
        W = _eye(self.n_states) if self.W is None else self.W
        V = _eye(self.n_obs) if self.V is None else self.V
        return W, V


def linear_transition_model(ssm) -> TransitionModel:
    """Transition model for a linear state-space system (constant
    Jacobians equal to the discrete Phi and observation H)."""
    Phi, Gamma, H = ssm.Phi, ssm.Gamma, ssm.H

    def propagate(x, u):
        return Phi @ x + Gamma @ u

    return TransitionModel(
        n_states=ssm.n_states,
        n_obs=H.shape[0],
        propagate=propagate,
        observe=lambda x: H @ x,
        jac_transition=lambda x, u: Phi,
        jac_observation=lambda x: H,
        linear_observation=True,
    )


@dataclass(frozen=True)
class AdaptiveConfig:
    """Covariance-matching settings for the adaptive filter.

    ``forgetting_factor`` must lie in (0, 1); step k receives weight
    d_k = (1-b)/(1-b^k), so the first update has full weight and the
    weights decrease towards 1-b.  With ``enabled`` False the adaptive
    step degenerates exactly to the plain EKF.  ``q_update_form``
    selects the state-increment used for the process-noise mean:
    "linearized" uses x_post - A_k x_prev, "residual" uses the increment
    relative to the propagated state x_post - propagate(x_prev, u).
    """

    forgetting_factor: float = DEFAULT_FORGETTING_FACTOR
    enabled: bool = True
    q_update_form: str = "linearized"
    psd_floor: float = PSD_FLOOR

    def __post_init__(self):
        if not (0.0 < self.forgetting_factor < 1.0):
            raise ValueError("forgetting factor must be in (0, 1)")
        if self.q_update_form not in ("linearized", "residual"):
            raise ValueError(f"unknown q_update_form {self.q_update_form!r}")


def forgetting_weight(b: float, k: int) -> float:
    """Exponential-forgetting weight d_k = (1-b)/(1-b^k) for step k >= 1."""
    if k < 1:
        raise ValueError("step index must be >= 1")
    return (1.0 - b) / (1.0 - b**k)


def predict(
    fs: FilterState, u: np.ndarray, m: TransitionModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Prediction half-step.

    Returns (x_prior, P_prior, A_k) where x_prior includes the current
    process-noise mean and P_prior = A P A' + W Q W', symmetrized.
    """
    if not (isinstance(u, np.ndarray) and u.ndim == 1):
        u = np.atleast_1d(np.asarray(u, dtype=float))
    x_prior = np.asarray(m.propagate(fs.x, u), dtype=float) + fs.noise.q
    A_k = np.asarray(m.jac_transition(fs.x, u), dtype=float)
    if m.W is None:
        P_prior = symmetrize(A_k @ fs.P @ A_k.T + fs.noise.Q)
    else:
        P_prior = symmetrize(A_k @ fs.P @ A_k.T + m.W @ fs.noise.Q @ m.W.T)
    # any inf/nan entry poisons the sums, so two reductions cover the check
    if not math.isfinite(float(np.sum(x_prior)) + float(np.sum(P_prior))):
        raise FilterNumericalError("non-finite prediction", step=fs.k + 1)
    return x_prior, P_prior, A_k


def _update_core(
    x_prior: np.ndarray,
    P_prior: np.ndarray,
    z: np.ndarray,
    m: TransitionModel,
    noise: NoiseStats,
    psd_floor: float = PSD_FLOOR,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Measurement update; returns (x_post, P_post, K, innovation, H_k)."""
    if not (isinstance(z, np.ndarray) and z.ndim == 1):
        z = np.atleast_1d(np.asarray(z, dtype=float))
    H_k = np.asarray(m.jac_observation(x_prior), dtype=float)
    if m.V is None and H_k.shape[0] == 1:
        # Scalar observation: the gain is a rescaled covariance column.
        h_row = H_k[0]
        PH = P_prior @ h_row
        s = float(h_row @ PH) + noise.R[0, 0]
        if s == 0.0 or not np.isfinite(s):
            raise FilterNumericalError("singular innovation covariance")
        gain = PH / s
        if m.linear_observation:
            z_pred = float(h_row @ x_prior)
        else:
            z_pred = float(np.asarray(m.observe(x_prior))[0])
        inn = z[0] - z_pred - noise.r[0]
        x_post = x_prior + gain * inn
        P_post = floor_spd(P_prior - gain[:, None] * PH[None, :], psd_floor)
        innovation = np.array([inn])
        K = gain[:, None]
    else:
        if m.V is None:
            S = H_k @ P_prior @ H_k.T + noise.R
        else:
            S = H_k @ P_prior @ H_k.T + m.V @ noise.R @ m.V.T
        S_inv = _inv_small(S)
        K = P_prior @ H_k.T @ S_inv
        innovation = z - np.asarray(m.observe(x_prior), dtype=float) - noise.r
        x_post = x_prior + K @ innovation
        P_post = floor_spd((_eye(len(x_prior)) - K @ H_k) @ P_prior, psd_floor)
    if not math.isfinite(float(np.sum(x_post))):
        raise FilterNumericalError("non-finite posterior state")
    return x_post, P_post, K, innovation, H_k


def update(
    x_prior: np.ndarray,
    P_prior: np.ndarray,
    z: np.ndarray,
    m: TransitionModel,
    noise: NoiseStats,
    k: int = 1,
) -> FilterState:
    """Measurement update returning the posterior filter state."""
    x_post, P_post, _, _, _ = _update_core(x_prior, P_prior, z, m, noise)
    return FilterState(x=x_post, P=P_post, noise=noise, k=k)


def covariance_match(
    prev: FilterState,
    x_prior: np.ndarray,
    P_prior: np.ndarray,
    new_x: np.ndarray,
    new_P: np.ndarray,
    innovation: np.ndarray,
    K: np.ndarray,
    A_k: np.ndarray,
    H_k: np.ndarray,
    cfg: AdaptiveConfig,
) -> NoiseStats:
    """Innovation-based recursive re-estimation of the noise statistics.

    Exponential forgetting with weight d_k blends the previous moments
    with single-step estimates: the process mean from the state
    increment, the process covariance from the gain-weighted innovation
    outer product plus the covariance decrease, the measurement mean
    from the raw pre-fit residual, and the measurement covariance from
    the innovation outer product minus the predicted part.  Both
    covariance estimates are symmetrized and eigenvalue-floored.
    """
    k = prev.k + 1
    d = forgetting_weight(cfg.forgetting_factor, k)
    n = prev.noise

    if cfg.q_update_form == "linearized":
        dx = new_x - A_k @ prev.x
    else:
        dx = new_x - (x_prior - n.q)
    q_new = (1.0 - d) * n.q + d * dx

    Ke = K @ innovation
    Q_new = (1.0 - d) * n.Q + d * (
        np.outer(Ke, Ke) + new_P - A_k @ prev.P @ A_k.T
    )
    Q_new = floor_spd(Q_new, cfg.psd_floor)

    # Raw pre-fit residual z - h(x_prior), i.e. the innovation before the
    # measurement-mean correction.
    raw = innovation + n.r
    r_new = (1.0 - d) * n.r + d * raw

    R_new = (1.0 - d) * n.R + d * (
        np.outer(innovation, innovation) - H_k @ P_prior @ H_k.T
    )
    R_new = floor_spd(R_new, cfg.psd_floor)
    return NoiseStats(q=q_new, Q=Q_new, r=r_new, R=R_new)


def kf_step(
    fs: FilterState, u: np.ndarray, z: np.ndarray, m: TransitionModel
) -> FilterState:
    """Linear Kalman filter step (fixed noise statistics).

    Identical math to :func:`ekf_step`; on a linear transition model the
    constant Jacobians make the two coincide exactly.
    """
    return ekf_step(fs, u, z, m)


def _sdof_scalar_step(
    fs: FilterState, u: np.ndarray, z, m: TransitionModel
) -> FilterState:
    """Fused predict+update for the 2-state / scalar-displacement-
    observation shape of the single-DOF loops: the same algebra as
    predict + _update_core carried out in plain floats (50k-step
    real-time loops live on this path)."""
    n = fs.noise
    x_prop = m.propagate(fs.x, u)
    xp1 = float(x_prop[0]) + n.q[0]
    xp2 = float(x_prop[1]) + n.q[1]
    A = m.jac_transition(fs.x, u)
    a11, a12 = A[0, 0], A[0, 1]
    a21, a22 = A[1, 0], A[1, 1]
    P = fs.P
    p11, p12, p22 = P[0, 0], 0.5 * (P[0, 1] + P[1, 0]), P[1, 1]
    Q = n.Q
    # symmetrized A P A' + Q
    t11 = a11 * p11 + a12 * p12
    t12 = a11 * p12 + a12 * p22
    t21 = a21 * p11 + a22 * p12
    t22 = a21 * p12 + a22 * p22
    pp11 = t11 * a11 + t12 * a12 + Q[0, 0]
    pp22 = t21 * a21 + t22 * a22 + Q[1, 1]
    pp12 = 0.5 * ((t11 * a21 + t12 * a22) + (t21 * a11 + t22 * a12)) + 0.5 * (
        Q[0, 1] + Q[1, 0]
    )
    H = m.jac_observation(fs.x)
    h1, h2 = H[0, 0], H[0, 1]
    ph1 = pp11 * h1 + pp12 * h2
    ph2 = pp12 * h1 + pp22 * h2
    s = h1 * ph1 + h2 * ph2 + n.R[0, 0]
    if s == 0.0 or not math.isfinite(s):
        raise FilterNumericalError("singular innovation covariance", step=fs.k + 1)
    g1 = ph1 / s
    g2 = ph2 / s
    inn = float(z[0]) - (h1 * xp1 + h2 * xp2) - n.r[0]
    x1 = xp1 + g1 * inn
    x2 = xp2 + g2 * inn
    if not math.isfinite(x1 + x2):
        raise FilterNumericalError("non-finite state", step=fs.k + 1)
    q11 = pp11 - g1 * ph1
    q22 = pp22 - g2 * ph2
    q12 = pp12 - 0.5 * (g1 * ph2 + g2 * ph1)
    # eigenvalue floor, closed form for the symmetric 2x2
    mean = 0.5 * (q11 + q22)
    disc = math.hypot(0.5 * (q11 - q22), q12)
    if mean - disc < PSD_FLOOR:
        P_post = floor_spd(np.array([[q11, q12], [q12, q22]]))
    else:
        P_post = np.array([[q11, q12], [q12, q22]])
    return FilterState(
        x=np.array([x1, x2]), P=P_post, noise=fs.noise, k=fs.k + 1
    )


def _wants_scalar_kernel(m: TransitionModel) -> bool:
    return (
        m.n_states == 2
        and m.n_obs == 1
        and m.linear_observation
        and m.W is None
        and m.V is None
    )


def ekf_step(
    fs: FilterState, u: np.ndarray, z: np.ndarray, m: TransitionModel
) -> FilterState:
    """Extended Kalman filter step: predict through the (possibly
    nonlinear) transition map, then update with the measurement."""
    if _wants_scalar_kernel(m):
        if not (isinstance(u, np.ndarray) and u.ndim == 1):
            u = np.atleast_1d(np.asarray(u, dtype=float))
        return _sdof_scalar_step(fs, u, z, m)
    x_prior, P_prior, _ = predict(fs, u, m)
    try:
        x_post, P_post, _, _, _ = _update_core(x_prior, P_prior, z, m, fs.noise)
    except FilterNumericalError as exc:
        raise FilterNumericalError(str(exc), step=fs.k + 1) from exc
    return FilterState(x=x_post, P=P_post, noise=fs.noise, k=fs.k + 1)


def aekf_step(
    fs: FilterState,
    u: np.ndarray,
    z: np.ndarray,
    m: TransitionModel,
    cfg: AdaptiveConfig = AdaptiveConfig(),
) -> FilterState:
    """Adaptive EKF step: EKF predict/update followed by covariance
    matching of the noise statistics (skipped entirely when adaptation
    is disabled, making the step equal to :func:`ekf_step`)."""
    if not cfg.enabled:
        return ekf_step(fs, u, z, m)
    x_prior, P_prior, A_k = predict(fs, u, m)
    try:
        x_post, P_post, K, innovation, H_k = _update_core(
            x_prior, P_prior, z, m, fs.noise, cfg.psd_floor
        )
    except FilterNumericalError as exc:
        raise FilterNumericalError(str(exc), step=fs.k + 1) from exc
    noise = covariance_match(
        fs, x_prior, P_prior, x_post, P_post, innovation, K, A_k, H_k, cfg
    )
    return FilterState(x=x_post, P=P_post, noise=noise, k=fs.k + 1)


def update_only_step(
    fs: FilterState, z: np.ndarray, m: TransitionModel
) -> FilterState:
    """Fuse a measurement into the current state without propagating
    (used for the initial sample of a session, taken at t0)."""
    x_post, P_post, _, _, _ = _update_core(fs.x, symmetrize(fs.P), z, m, fs.noise)
    return FilterState(x=x_post, P=P_post, noise=fs.noise, k=fs.k)


def numeric_jacobian(
    f: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    scale: float = 1e-6,
) -> np.ndarray:
    """Central-difference Jacobian of a vector map, with per-component
    step ``scale * max(|x_i|, 1)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        h = scale * max(abs(x[i]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float))
        if not (np.isfinite(fp).all() and np.isfinite(fm).all()):
            raise FilterNumericalError(f"non-finite map sample near x[{i}]")
        J[:, i] = (fp - fm) / (2.0 * h)
    return J
