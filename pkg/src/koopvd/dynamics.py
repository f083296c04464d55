"""Nonlinear singletrack vehicle models and a fixed-step RK4 integrator.

States and inputs are plain numpy arrays with the quantity on the last axis,
so every function here also accepts a batch of shape ``(..., n)``.

State layouts::

    5-state: (v_x, v_y, psi_dot, rho_dot_f, rho_dot_r)
    3-state: (v_x, v_y, psi_dot)

Input layouts::

    torque/steer: (M_a_f, M_a_r, M_b_f, M_b_r, delta_f, delta_r)
    slip/steer:   (kappa_f, kappa_r, delta_f, delta_r)
    force:        (F1x, F1y, F3x, F3y)   body frame, per wheel

Each axle carries two co-located wheels, so every per-wheel force is counted
twice in the body balance.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .params import ShapeConvention, TireParams, VehicleParams

SLIP_EPS = 0.5
"""Lower bound (m/s) on the wheel speed used to normalise the slip ratio."""

STATE5_NAMES = ("v_x", "v_y", "psi_dot", "rho_dot_f", "rho_dot_r")
STATE3_NAMES = ("v_x", "v_y", "psi_dot")

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SimulationFault(FloatingPointError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


def magic_formula(x, coeffs, convention=ShapeConvention.SIN):
    """Pacejka magic formula ``D*trig(C*atan(Bx - E(Bx - atan(Bx))))``."""
    B, C, D, E = coeffs
    bx = B * np.asarray(x, dtype=float)
    phase = C * np.arctan(bx - E * (bx - np.arctan(bx)))
    if ShapeConvention(convention) is ShapeConvention.SIN:
        return D * np.sin(phase)
    return D * np.cos(phase)


def _wheel_frame_velocity(v_x, v_y, psi_dot, lever, delta):
    # contact point velocity in body frame, rotated by -delta into the wheel frame
    vcx = v_x
    vcy = v_y + lever * psi_dot
    c, s = np.cos(delta), np.sin(delta)
    return c * vcx + s * vcy, -s * vcx + c * vcy


def _slip_angle(v_wx, v_wy):
    return -np.arctan2(v_wy, np.abs(v_wx))


def _slip_ratio(omega_r, v_wx):
    return (omega_r - v_wx) / np.maximum(np.abs(v_wx), SLIP_EPS)


def tire_slips(x, u, vp: VehicleParams):
    """Per-axle slip ratio and slip angle for the 5-state model.

    Returns ``(kappa_f, alpha_f, kappa_r, alpha_r)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v_x, v_y, psi_dot, rho_f, rho_r = np.moveaxis(x, -1, 0)
    delta_f, delta_r = u[..., 4], u[..., 5]
    wfx, wfy = _wheel_frame_velocity(v_x, v_y, psi_dot, vp.l_v, delta_f)
    wrx, wry = _wheel_frame_velocity(v_x, v_y, psi_dot, -vp.l_h, delta_r)
    return (
        _slip_ratio(vp.r * rho_f, wfx),
        _slip_angle(wfx, wfy),
        _slip_ratio(vp.r * rho_r, wrx),
        _slip_angle(wrx, wry),
    )


def _slip_angles_3(x, delta_f, delta_r, vp):
    v_x, v_y, psi_dot = x[..., 0], x[..., 1], x[..., 2]
    wfx, wfy = _wheel_frame_velocity(v_x, v_y, psi_dot, vp.l_v, delta_f)
    wrx, wry = _wheel_frame_velocity(v_x, v_y, psi_dot, -vp.l_h, delta_r)
    return _slip_angle(wfx, wfy), _slip_angle(wrx, wry)


def _to_body(fx_w, fy_w, delta):
    c, s = np.cos(delta), np.sin(delta)
    return c * fx_w - s * fy_w, s * fx_w + c * fy_w


def _body_rates(v_x, v_y, psi_dot, f1x, f1y, f3x, f3y, vp: VehicleParams):
    """Rigid-body derivatives given per-wheel body-frame forces."""
    speed = np.sqrt(v_x * v_x + v_y * v_y)
    drag = vp.drag_factor * speed
    dv_x = psi_dot * v_y + (2.0 * (f1x + f3x) - drag * v_x) / vp.m_v
    dv_y = -psi_dot * v_x + (2.0 * (f1y + f3y) - drag * v_y) / vp.m_v
    dpsi = 2.0 * (vp.l_v * f1y - vp.l_h * f3y) / vp.J_zz
    return dv_x, dv_y, dpsi


def dynamics_5state(x, u, vp: VehicleParams, tp: TireParams):
    """Full singletrack model with wheel-spin states and torque inputs."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v_x, v_y, psi_dot, rho_f, rho_r = np.moveaxis(x, -1, 0)
    ma_f, ma_r, mb_f, mb_r, delta_f, delta_r = np.moveaxis(u, -1, 0)
    kappa_f, alpha_f, kappa_r, alpha_r = tire_slips(x, u, vp)
    conv = tp.shape_convention
    fxw_f = magic_formula(kappa_f, tp.longitudinal, conv)
    fyw_f = magic_formula(alpha_f, tp.lateral, conv)
    fxw_r = magic_formula(kappa_r, tp.longitudinal, conv)
    fyw_r = magic_formula(alpha_r, tp.lateral, conv)
    f1x, f1y = _to_body(fxw_f, fyw_f, delta_f)
    f3x, f3y = _to_body(fxw_r, fyw_r, delta_r)
    dv_x, dv_y, dpsi = _body_rates(v_x, v_y, psi_dot, f1x, f1y, f3x, f3y, vp)
    drho_f = (ma_f - mb_f * np.sign(rho_f) - vp.r * fxw_f) / vp.J_R
    drho_r = (ma_r - mb_r * np.sign(rho_r) - vp.r * fxw_r) / vp.J_R
    return np.stack([dv_x, dv_y, dpsi, drho_f, drho_r], axis=-1)


def dynamics_3state(x, u, vp: VehicleParams, tp: TireParams):
    """Singletrack model with slips as inputs and no wheel-spin states."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    kappa_f, kappa_r, delta_f, delta_r = np.moveaxis(u, -1, 0)
    alpha_f, alpha_r = _slip_angles_3(x, delta_f, delta_r, vp)
    conv = tp.shape_convention
    f1x, f1y = _to_body(
        magic_formula(kappa_f, tp.longitudinal, conv), magic_formula(alpha_f, tp.lateral, conv), delta_f
    )
    f3x, f3y = _to_body(
        magic_formula(kappa_r, tp.longitudinal, conv), magic_formula(alpha_r, tp.lateral, conv), delta_r
    )
    rates = _body_rates(x[..., 0], x[..., 1], x[..., 2], f1x, f1y, f3x, f3y, vp)
    return np.stack(rates, axis=-1)


def dynamics_3state_force(x, u, vp: VehicleParams):
    """Singletrack body with body-frame tire forces as inputs."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    rates = _body_rates(x[..., 0], x[..., 1], x[..., 2], u[..., 0], u[..., 1], u[..., 2], u[..., 3], vp)
    return np.stack(rates, axis=-1)


def kinetic_energy(x, vp: VehicleParams):
    """Translational plus yaw kinetic energy of 3-state (or leading-3) states."""
    x = np.asarray(x, dtype=float)
    return 0.5 * vp.m_v * (x[..., 0] ** 2 + x[..., 1] ** 2) + 0.5 * vp.J_zz * x[..., 2] ** 2


MODEL_VARIANTS = ("5state", "3state", "3state_force")


def make_model(variant: str, vp: VehicleParams, tp: TireParams) -> VectorField:
    """Bind parameters into an ``f(x, u)`` vector field."""
    if variant == "5state":
        return lambda x, u: dynamics_5state(x, u, vp, tp)
    if variant == "3state":
        return lambda x, u: dynamics_3state(x, u, vp, tp)
    if variant == "3state_force":
        return lambda x, u: dynamics_3state_force(x, u, vp)
    raise ValueError(f"unknown model variant {variant!r}; expected one of {MODEL_VARIANTS}")


def state_dim(variant: str) -> int:
    return 5 if variant == "5state" else 3


def input_dim(variant: str) -> int:
    return {"5state": 6, "3state": 4, "3state_force": 4}[variant]


def integrate_step(f: VectorField, x, u, Ts: float):
    """One classical RK4 step with the input held constant over the step."""
    if not Ts > 0:
        raise ValueError(f"Ts must be > 0, got {Ts}")
    x = np.asarray(x, dtype=float)
    k1 = f(x, u)
    k2 = f(x + 0.5 * Ts * k1, u)
    k3 = f(x + 0.5 * Ts * k2, u)
    k4 = f(x + Ts * k3, u)
    x_next = x + (Ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise SimulationFault("non-finite state after integration step")
    return x_next


def simulate(f: VectorField, x0, inputs, Ts: float, n_steps: Optional[int] = None):
    """Integrate from ``x0`` under a piecewise-constant input sequence.

    ``inputs`` has shape ``(N, ..., m)`` (time first); a single input vector
    is broadcast over ``n_steps``. Returns an array of shape ``(N + 1, ...)``
    whose first entry is ``x0``.
    """
    x = np.asarray(x0, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if n_steps is None:
        n_steps = inputs.shape[0]
    elif inputs.ndim == 1:
        inputs = np.broadcast_to(inputs, (n_steps,) + inputs.shape)
    if inputs.shape[0] != n_steps:
        raise ValueError(f"input sequence has {inputs.shape[0]} steps, expected {n_steps}")
    traj = np.empty((n_steps + 1,) + x.shape)
    traj[0] = x
    for k in range(n_steps):
        try:
            x = integrate_step(f, x, inputs[k], Ts)
        except SimulationFault as exc:
            raise SimulationFault(f"simulation blew up at step {k}", step=k) from exc
        traj[k + 1] = x
    return traj


def write_trajectory_csv(path, traj, Ts: float, names: Sequence[str] = None) -> None:
    """Write ``t,v_x,v_y,psi_dot[,rho_dot_f,rho_dot_r]`` rows at 17 significant digits."""
    traj = np.asarray(traj, dtype=float)
    if names is None:
        names = STATE5_NAMES if traj.shape[1] == 5 else STATE3_NAMES
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("t",) + tuple(names))
        for k, row in enumerate(traj):
            writer.writerow([f"{k * Ts:.17g}"] + [f"{v:.17g}" for v in row])


def read_trajectory_csv(path):
    """Return ``(t, traj, names)`` from a trajectory CSV."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return data[:, 0], data[:, 1:], tuple(header[1:])
