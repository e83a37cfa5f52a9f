"""Geometric position solvers.

Direct-path fix from RTT plus departure angles; joint multi-path fix over
two or more validated single-bounce observations via linear least squares;
a constrained single-path fallback; and the locus residual that scores one
reflected path against a predicted position.

The single-bounce measurement equation: with departure direction u_dep,
arrival direction u_arr (UE toward the bounce), total length L and unknown
first-leg length leg, the UE position satisfies

    p = bs + leg * u_dep - (L - leg) * u_arr
      = (bs - L * u_arr) + leg * (u_dep + u_arr)

One path therefore pins p to a line segment (leg in [0, L]); two or more
paths make the joint system overdetermined in (p, leg_1..leg_K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import SPEED_OF_LIGHT, unit_from_angles


@dataclass
class Fix:
    """One position solution handed to the fusion filter."""

    t: float
    p: np.ndarray
    cov: np.ndarray  # 3x3, m^2
    residual: float  # RMS equation misfit, m
    source: str  # "los" or "sbr"
    n_paths: int = 1
    path_residuals: list = field(default_factory=list)
    # present when the solver co-estimated a nav-frame yaw misalignment of
    # the attitude used to globalize body-frame arrival angles
    yaw: float | None = None
    yaw_var: float = 0.0
    yaw_pos_cov: np.ndarray | None = None  # cov(p, yaw), shape (3,)


def _angle_std_rad(var_angle_deg2: float) -> float:
    return math.radians(math.sqrt(var_angle_deg2))


def _unit_jacobian(az: float, el: float):
    """Columns d(unit)/d(az), d(unit)/d(el)."""
    ca, sa = math.cos(az), math.sin(az)
    ce, se = math.cos(el), math.sin(el)
    j_az = np.array([-ce * sa, ce * ca, 0.0])
    j_el = np.array([-se * ca, -se * sa, ce])
    return j_az, j_el


def los_fix(bs, obs, var_range_m2: float = 0.0, var_angle_deg2: float = 0.0) -> Fix:
    """Position from one direct-path observation: range out of the RTT,
    direction out of the departure angles, first-order covariance from the
    declared measurement variances."""
    d = SPEED_OF_LIGHT * obs.rtt / 2.0
    if d <= 0.0:
        raise ValueError("non-positive range")
    u = unit_from_angles(obs.aod_az, obs.aod_el)
    p = bs.p + d * u
    sig_a = _angle_std_rad(var_angle_deg2)
    j_az, j_el = _unit_jacobian(obs.aod_az, obs.aod_el)
    cov = var_range_m2 * np.outer(u, u) + (sig_a * d) ** 2 * (
        np.outer(j_az, j_az) + np.outer(j_el, j_el)
    )
    return Fix(t=obs.t, p=p, cov=cov, residual=0.0, source="los")


def sbr_fix(
    pairs,
    var_range_m2: float = 0.0,
    var_angle_deg2: float = 0.0,
    var_aoa_extra_rad2: float = 0.0,
    cond_max: float = 1e8,
    estimate_yaw: bool = False,
    weighted: bool = True,
):
    """Joint fix over K >= 2 single-bounce paths.

    pairs: list of (BaseStation, SbrObs). Unknowns are (p, leg_1..leg_K);
    each path contributes the three equations
        p - leg_k * (u_dep_k + u_arr_k) = bs_k - L_k * u_arr_k.
    Solved by SVD least squares. Returns None instead of a wrong answer when
    the system is ill-conditioned (> cond_max) or any recovered first leg
    falls outside [0, L_k].

    weighted scales each path's equations by its expected noise (longer legs
    amplify angle noise), which matters when path lengths vary a lot.

    estimate_yaw appends one unknown: a common nav-frame yaw misalignment of
    the attitude that globalized the arrival angles. Its column per path is
    (L_k - leg_k) * (z_hat x u_arr_k), linearized at first-pass leg values.
    The estimate and its variance land in Fix.yaw / Fix.yaw_var so a fusion
    filter can correct heading from the same measurements. Needs K >= 3 for
    vertical-wall paths: u_dep + u_arr and the yaw column are then all
    horizontal, and the K=2 horizontal subsystem has more unknowns than
    equations, so the condition check reports no fix.

    Covariance comes from first-order propagation of the declared range and
    angle variances through the solver; var_aoa_extra_rad2 adds attitude
    uncertainty to the arrival angles beyond what estimate_yaw models.
    """
    K = len(pairs)
    if K < 2:
        raise ValueError("joint fix needs at least two paths")
    A = np.zeros((3 * K, 3 + K))
    y = np.zeros(3 * K)
    lengths = np.empty(K)
    units = []
    t_obs = pairs[0][1].t
    for k, (bs, obs) in enumerate(pairs):
        L = SPEED_OF_LIGHT * obs.toa
        u_dep = unit_from_angles(obs.aod_az, obs.aod_el)
        u_arr = unit_from_angles(obs.aoa_az, obs.aoa_el)
        rows = slice(3 * k, 3 * k + 3)
        A[rows, :3] = np.eye(3)
        A[rows, 3 + k] = -(u_dep + u_arr)
        y[rows] = bs.p - L * u_arr
        lengths[k] = L
        units.append((u_dep, u_arr, obs))
    u_svd, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[-1] <= 0.0 or s[0] / s[-1] > cond_max:
        return None
    x = vt.T @ ((u_svd.T @ y) / s)
    legs0 = x[3:]

    va = _angle_std_rad(var_angle_deg2) ** 2
    va_arr = va + var_aoa_extra_rad2
    n_unk = 3 + K + (1 if estimate_yaw else 0)
    if weighted or estimate_yaw:
        # second pass: noise-scaled rows, optional shared yaw column
        legs_ref = np.clip(legs0, 0.0, lengths)
        if weighted:
            s2 = var_range_m2 + va * legs_ref**2 + va_arr * (lengths - legs_ref) ** 2
            w = 1.0 / np.sqrt(np.maximum(s2, 1e-12))
            w /= w.max()
        else:
            w = np.ones(K)
        A2 = np.zeros((3 * K, n_unk))
        y2 = np.empty(3 * K)
        for k, (u_dep, u_arr, obs) in enumerate(units):
            rows = slice(3 * k, 3 * k + 3)
            A2[rows, : 3 + K] = w[k] * A[rows]
            if estimate_yaw:
                A2[rows, 3 + K] = (
                    w[k] * (lengths[k] - legs_ref[k]) * np.array([-u_arr[1], u_arr[0], 0.0])
                )
            y2[rows] = w[k] * y[rows]
        u_svd, s, vt = np.linalg.svd(A2, full_matrices=False)
        if s[-1] <= 0.0 or s[0] / s[-1] > cond_max:
            return None
        x = vt.T @ ((u_svd.T @ y2) / s)
        row_w = np.repeat(w, 3)
    else:
        row_w = np.ones(3 * K)

    p = x[:3]
    legs = x[3 : 3 + K]
    psi = float(x[3 + K]) if estimate_yaw else None
    for k in range(K):
        tol = 1e-9 * max(1.0, lengths[k])
        if legs[k] < -tol or legs[k] > lengths[k] + tol:
            return None
    # unweighted equation misfit, with the yaw term included when estimated
    r = A @ np.concatenate([p, legs]) - y
    if estimate_yaw:
        for k, (u_dep, u_arr, obs) in enumerate(units):
            rows = slice(3 * k, 3 * k + 3)
            r[rows] += psi * (lengths[k] - legs[k]) * np.array([-u_arr[1], u_arr[0], 0.0])
    residual = float(np.sqrt(np.mean(r**2)))
    path_residuals = [float(np.linalg.norm(r[3 * k : 3 * k + 3])) for k in range(K)]

    # First-order sensitivity: A dx = dy - dA x, columns per input
    # [L_k, aod_az_k, aod_el_k, aoa_az_k, aoa_el_k].
    rhs = np.zeros((3 * K, 5 * K))
    sig2 = np.empty(5 * K)
    for k, (u_dep, u_arr, obs) in enumerate(units):
        rows = slice(3 * k, 3 * k + 3)
        cols = slice(5 * k, 5 * k + 5)
        jd_az, jd_el = _unit_jacobian(obs.aod_az, obs.aod_el)
        ja_az, ja_el = _unit_jacobian(obs.aoa_az, obs.aoa_el)
        rhs[rows, 5 * k + 0] = -u_arr
        rhs[rows, 5 * k + 1] = legs[k] * jd_az
        rhs[rows, 5 * k + 2] = legs[k] * jd_el
        rhs[rows, 5 * k + 3] = (legs[k] - lengths[k]) * ja_az
        rhs[rows, 5 * k + 4] = (legs[k] - lengths[k]) * ja_el
        sig2[cols] = [var_range_m2, va, va, va_arr, va_arr]
    j_all = vt.T @ ((u_svd.T @ (row_w[:, None] * rhs)) / s[:, None])
    j_p = j_all[:3]
    cov = (j_p * sig2) @ j_p.T
    fix = Fix(
        t=t_obs,
        p=p,
        cov=cov,
        residual=residual,
        source="sbr",
        n_paths=K,
        path_residuals=path_residuals,
    )
    if estimate_yaw:
        j_psi = j_all[3 + K]
        fix.yaw = psi
        fix.yaw_var = float((j_psi * sig2) @ j_psi)
        fix.yaw_pos_cov = (j_p * sig2) @ j_psi
    return fix


def sbr_fix_single(bs, obs, known_height_m: float, eps_cond: float = 1e-2):
    """Single-path fix with the UE height constrained.

    The height equation fixes the first-leg length only when the vertical
    components of the two directions do not cancel; vertical reflectors make
    them cancel exactly, so this fallback declines on such geometry instead
    of dividing by ~0.
    """
    L = SPEED_OF_LIGHT * obs.toa
    u_dep = unit_from_angles(obs.aod_az, obs.aod_el)
    u_arr = unit_from_angles(obs.aoa_az, obs.aoa_el)
    denom = u_dep[2] + u_arr[2]
    if not math.isfinite(eps_cond) or abs(denom) <= eps_cond:
        return None
    leg = (known_height_m - bs.p[2] + L * u_arr[2]) / denom
    if leg < 0.0 or leg > L:
        return None
    p = bs.p + leg * u_dep - (L - leg) * u_arr
    return Fix(t=obs.t, p=p, cov=np.zeros((3, 3)), residual=0.0, source="sbr", n_paths=1)


def sbr_locus_residual(bs, obs, ref_p) -> float:
    """Distance from ref_p to the observation's solution segment.

    Zero (up to noise) for a genuine single bounce when ref_p is near the
    true position; order of the middle-leg length for higher-order bounces,
    which is what makes the residual usable as a bounce-count discriminator.
    """
    ref_p = np.asarray(ref_p, dtype=float)
    L = SPEED_OF_LIGHT * obs.toa
    u_dep = unit_from_angles(obs.aod_az, obs.aod_el)
    u_arr = unit_from_angles(obs.aoa_az, obs.aoa_el)
    base = bs.p - L * u_arr
    direction = u_dep + u_arr
    dd = float(direction @ direction)
    if dd <= 0.0:
        leg = 0.0
    else:
        leg = float(np.clip((ref_p - base) @ direction / dd, 0.0, L))
    return float(np.linalg.norm(ref_p - (base + leg * direction)))


def sbr_locus_residuals(bs_positions, lengths, u_deps, u_arrs, ref_p) -> np.ndarray:
    """Vectorized sbr_locus_residual over K paths (arrays shaped (K, 3) /
    (K,)); used by the pipeline where per-epoch path counts are large."""
    ref_p = np.asarray(ref_p, dtype=float)
    base = bs_positions - lengths[:, None] * u_arrs
    direction = u_deps + u_arrs
    dd = np.einsum("ij,ij->i", direction, direction)
    num = np.einsum("ij,ij->i", ref_p - base, direction)
    leg = np.clip(np.divide(num, dd, out=np.zeros_like(num), where=dd > 0.0), 0.0, lengths)
    closest = base + leg[:, None] * direction
    return np.linalg.norm(ref_p - closest, axis=1)


def velocity_from_fixes(prev: Fix, curr: Fix) -> np.ndarray:
    """First-difference velocity between consecutive fixes, m/s."""
    dt = curr.t - prev.t
    if dt <= 0.0:
        raise ValueError("fixes must be time-ordered")
    return (curr.p - prev.p) / dt
