"""Error-state unscented Kalman filter.

Prediction pushes sigma points of the 15-dimensional error state
[dp, dv, dtheta, db_g, db_a] through the strapdown mechanization, each point
carrying its own bias hypothesis; the attitude error is a body-frame rotation
vector injected as q <- q * exp(dtheta), which keeps quaternions out of the
covariance algebra. Updates are position fixes with an innovation gate.

The covariance tracks delta = true (-) estimate, i.e. truth = estimate (+)
delta with p/v/bias addition and quaternion right-multiplication for
attitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import chi2

from . import quat
from .ins import mechanize_arrays

NIS_GATE_999_DOF3 = float(chi2.ppf(0.999, 3))

N_ERR = 15
_SL = {
    "p": slice(0, 3),
    "v": slice(3, 6),
    "att": slice(6, 9),
    "bg": slice(9, 12),
    "ba": slice(12, 15),
}


class NumericError(RuntimeError):
    """Covariance corruption or another unrecoverable numeric failure."""


@dataclass
class UkfParams:
    """Sigma-point scaling plus continuous-time process noise densities.

    q_vel and q_att should match the IMU white-noise densities squared
    ((m/s^2)^2/Hz and (rad/s)^2/Hz); the bias densities stay zero when biases
    are modeled as run constants.
    """

    alpha: float = 0.5
    beta: float = 2.0
    kappa: float = 0.0
    q_pos: float = 0.0
    q_vel: float = 1e-6
    q_att: float = 1e-8
    q_bias_gyro: float = 0.0
    q_bias_accel: float = 0.0
    nis_gate: float = NIS_GATE_999_DOF3

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")

    def process_noise(self) -> np.ndarray:
        q = np.zeros(N_ERR)
        q[_SL["p"]] = self.q_pos
        q[_SL["v"]] = self.q_vel
        q[_SL["att"]] = self.q_att
        q[_SL["bg"]] = self.q_bias_gyro
        q[_SL["ba"]] = self.q_bias_accel
        return np.diag(q)

    @classmethod
    def from_imu_error(cls, imu_err, **kwargs) -> "UkfParams":
        return cls(
            q_vel=imu_err.accel_noise_density**2,
            q_att=imu_err.gyro_noise_density**2,
            **kwargs,
        )


@dataclass
class FilterState:
    """Nominal state plus error-state covariance (15x15, ordering
    [dp, dv, dtheta, db_g, db_a])."""

    t: float
    p: np.ndarray
    v: np.ndarray
    q_bn: np.ndarray
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: np.eye(N_ERR))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.q_bn = np.asarray(self.q_bn, dtype=float).reshape(4)
        self.b_g = np.asarray(self.b_g, dtype=float).reshape(3)
        self.b_a = np.asarray(self.b_a, dtype=float).reshape(3)
        self.P = np.asarray(self.P, dtype=float).reshape(N_ERR, N_ERR)

    def copy(self) -> "FilterState":
        return FilterState(
            t=self.t,
            p=self.p.copy(),
            v=self.v.copy(),
            q_bn=self.q_bn.copy(),
            b_g=self.b_g.copy(),
            b_a=self.b_a.copy(),
            P=self.P.copy(),
        )

    def error_vector(self, p, v, q_bn, b_g, b_a) -> np.ndarray:
        """delta = true (-) estimate against a reference truth; pairs with P
        for consistency statistics."""
        e = np.empty(N_ERR)
        e[_SL["p"]] = np.asarray(p, dtype=float) - self.p
        e[_SL["v"]] = np.asarray(v, dtype=float) - self.v
        e[_SL["att"]] = quat.to_rotvec(quat.multiply(quat.conjugate(self.q_bn), q_bn))
        e[_SL["bg"]] = np.asarray(b_g, dtype=float) - self.b_g
        e[_SL["ba"]] = np.asarray(b_a, dtype=float) - self.b_a
        return e


@dataclass
class UpdateInfo:
    nis: float
    accepted: bool


def sigma_points(mean, P, alpha: float = 0.5, beta: float = 2.0, kappa: float = 0.0):
    """Scaled unscented transform: 2n+1 points and (mean, cov) weights.

    Raises numpy.linalg.LinAlgError when P has lost positive definiteness,
    which callers treat as covariance corruption.
    """
    mean = np.asarray(mean, dtype=float)
    P = np.asarray(P, dtype=float)
    n = mean.size
    lam = alpha**2 * (n + kappa) - n
    root = np.linalg.cholesky((n + lam) * P)
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    pts[1 : n + 1] = mean + root.T
    pts[n + 1 :] = mean - root.T
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + 1.0 - alpha**2 + beta
    return pts, wm, wc


def _inject(fs: FilterState, dx: np.ndarray):
    """Apply error-state points/corrections to the nominal state; dx may be
    a single 15-vector or a stack (m, 15)."""
    dx = np.asarray(dx, dtype=float)
    p = fs.p + dx[..., _SL["p"]]
    v = fs.v + dx[..., _SL["v"]]
    q = quat.normalize(quat.multiply(fs.q_bn, quat.from_rotvec(dx[..., _SL["att"]])))
    bg = fs.b_g + dx[..., _SL["bg"]]
    ba = fs.b_a + dx[..., _SL["ba"]]
    return p, v, q, bg, ba


def _finalize_cov(P: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Re-symmetrize; floor sub-tolerance negative eigenvalues (an artifact of
    negative center weights in the scaled transform); fail beyond -tol."""
    P = 0.5 * (P + P.T)
    eigmin = float(np.linalg.eigvalsh(P)[0])
    if eigmin < -tol:
        raise NumericError(f"covariance indefinite (min eigenvalue {eigmin:.3e})")
    if eigmin < 1e-12:
        P = P + (1e-12 - min(eigmin, 0.0)) * np.eye(P.shape[0])
    return P


def predict(fs: FilterState, gyros, accels, dts, params: UkfParams, trapezoid: bool = True) -> FilterState:
    """Propagate through the mechanization over a batch of IMU samples.

    gyros/accels: (m, 3) arrays, dts: (m,) per-sample intervals covering
    (fs.t, fs.t + sum(dts)]. Each sigma point is mechanized with its own bias
    subvector; process noise enters as Q * elapsed time.
    """
    gyros = np.atleast_2d(np.asarray(gyros, dtype=float))
    accels = np.atleast_2d(np.asarray(accels, dtype=float))
    dts = np.atleast_1d(np.asarray(dts, dtype=float))
    if np.any(dts <= 0.0):
        raise ValueError("IMU intervals must be positive")
    pts, wm, wc = sigma_points(np.zeros(N_ERR), fs.P, params.alpha, params.beta, params.kappa)
    p, v, q, bg, ba = _inject(fs, pts)
    for k in range(len(dts)):
        p, v, q = mechanize_arrays(p, v, q, bg, ba, gyros[k], accels[k], dts[k], trapezoid=trapezoid)
    p_mean = wm @ p
    v_mean = wm @ v
    bg_mean = wm @ bg
    ba_mean = wm @ ba
    # attitude mean relative to the propagated center point
    dth = quat.to_rotvec(quat.multiply(quat.conjugate(q[0]), q))
    q_mean = quat.normalize(quat.multiply(q[0], quat.from_rotvec(wm @ dth)))
    err = np.empty((pts.shape[0], N_ERR))
    err[:, _SL["p"]] = p - p_mean
    err[:, _SL["v"]] = v - v_mean
    err[:, _SL["att"]] = quat.to_rotvec(quat.multiply(quat.conjugate(q_mean), q))
    err[:, _SL["bg"]] = bg - bg_mean
    err[:, _SL["ba"]] = ba - ba_mean
    elapsed = float(np.sum(dts))
    P = (wc * err.T) @ err + params.process_noise() * elapsed
    P = _finalize_cov(P)
    return FilterState(
        t=fs.t + elapsed, p=p_mean, v=v_mean, q_bn=q_mean, b_g=bg_mean, b_a=ba_mean, P=P
    )


@lru_cache(maxsize=16)
def _gate_for_dim(gate_dof3: float, dim: int) -> float:
    """Re-express the 3-dof gate threshold at another measurement dimension,
    holding the confidence level fixed."""
    if dim == 3:
        return gate_dof3
    conf = chi2.cdf(gate_dof3, 3)
    return float(chi2.ppf(conf, dim))


def _ut_update(fs: FilterState, z, z_pts, R, gate, pts, wm, wc):
    z = np.asarray(z, dtype=float)
    z_mean = wm @ z_pts
    dz = z_pts - z_mean
    S = (wc * dz.T) @ dz + R
    C = (wc * pts.T) @ dz  # 15xM cross covariance
    nu = z - z_mean
    try:
        s_inv_nu = np.linalg.solve(S, nu)
        K = np.linalg.solve(S, C.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular innovation covariance: {exc}") from exc
    nis = float(nu @ s_inv_nu)
    if nis > gate:
        return fs.copy(), UpdateInfo(nis=nis, accepted=False)
    dx = K @ nu
    P = _finalize_cov(fs.P - K @ S @ K.T)
    p, v, q, bg, ba = _inject(fs, dx)
    out = FilterState(t=fs.t, p=p, v=v, q_bn=q, b_g=bg, b_a=ba, P=P)
    return out, UpdateInfo(nis=nis, accepted=True)


def update_position(fs: FilterState, fix, R, params: UkfParams):
    """Position-fix measurement update with NIS gating.

    Returns (state, UpdateInfo); the state is unchanged when the normalized
    innovation squared exceeds the gate, which protects the filter from
    admission-gate leakage.
    """
    R = np.asarray(R, dtype=float).reshape(3, 3)
    pts, wm, wc = sigma_points(np.zeros(N_ERR), fs.P, params.alpha, params.beta, params.kappa)
    z_pts = fs.p + pts[:, _SL["p"]]
    return _ut_update(fs, fix.p, z_pts, R, params.nis_gate, pts, wm, wc)


def update_position_yaw(fs: FilterState, fix, R, params: UkfParams):
    """Joint position + yaw-misalignment update.

    The fix carries a nav-frame yaw offset of the attitude that was used to
    globalize body-frame angle measurements; as a measurement it sees the
    z component of the nav-frame attitude error, which is the third row of
    R(q) applied to the body-side error angles. R is 4x4 with the position
    block first.
    """
    R = np.asarray(R, dtype=float).reshape(4, 4)
    pts, wm, wc = sigma_points(np.zeros(N_ERR), fs.P, params.alpha, params.beta, params.kappa)
    row_z = quat.to_matrix(fs.q_bn)[2]
    z_pts = np.column_stack([fs.p + pts[:, _SL["p"]], pts[:, _SL["att"]] @ row_z])
    z = np.concatenate([np.asarray(fix.p, dtype=float), [fix.yaw]])
    gate = _gate_for_dim(params.nis_gate, 4)
    return _ut_update(fs, z, z_pts, R, gate, pts, wm, wc)
