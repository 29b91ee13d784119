"""Synthetic telemetry generator standing in for the physical rig.

Measured joint torques are the sum of a rigid-body term (diagonal inertia
plus gravity), joint friction, a Bouc-Wen cannula-seal hysteresis on the
insertion and roll joints, a spring-damper body-wall interaction at the
trocar, and the transpose-Jacobian image of any commanded contact wrench.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Condition, Trajectory
from .manipulator import KinematicModel, chain, jacobian, point_jacobian, rot_x, rot_y

GRAVITY = np.array([0.0, 0.0, -9.81])


class ScenarioError(ValueError):
    pass


class Family(str, enum.Enum):
    LISSAJOUS = "lissajous"
    WAYPOINTS = "waypoints"
    CONTACT_PRESS = "contact-press"

    @classmethod
    def parse(cls, v) -> "Family":
        if isinstance(v, Family):
            return v
        key = str(v).strip().lower().replace("_", "-")
        aliases = {"lissajousjointspace": cls.LISSAJOUS, "randomsmoothwaypoints": cls.WAYPOINTS,
                   "contactpresssequence": cls.CONTACT_PRESS}
        for f in cls:
            if f.value == key:
                return f
        if key.replace("-", "") in aliases:
            return aliases[key.replace("-", "")]
        raise ValueError(f"unknown trajectory family {v!r}")


def _vec6(v) -> tuple[float, ...]:
    a = np.broadcast_to(np.asarray(v, dtype=float), (6,))
    return tuple(float(x) for x in a)


@dataclass(frozen=True)
class BoucWen:
    """Hysteretic force ``amplitude * z`` with ``dz/dx = (A - beta*sgn(dx)|z|^(n-1)z - gamma|z|^n) / yield_disp``."""

    amplitude: float = 0.0
    yield_disp: float = 1e-3
    A: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5
    n: float = 1.0
    viscous: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0 or self.yield_disp <= 0 or self.viscous < 0 or self.n < 1:
            raise ValueError("Bouc-Wen parameters must be nonnegative (yield_disp > 0, n >= 1)")

    def slope(self, z: float, sign: float) -> float:
        az = abs(z)
        return (self.A - self.beta * sign * az ** (self.n - 1) * z - self.gamma * az ** self.n) / self.yield_disp


@dataclass(frozen=True)
class DisturbanceModel:
    """Internal torque decomposition for the simulated arm.

    Per-joint vectors are in Nm (revolute) or N (joint 3).  ``gravity_scale``
    multiplies standard gravity; the lumped masses sit at the instrument
    shaft midpoint and at ``arm_com`` in the pitch-link frame.
    """

    inertia: tuple[float, ...] = (0.05, 0.05, 0.3, 5e-4, 1e-4, 1e-4)
    viscous: tuple[float, ...] = (0.05, 0.05, 1.0, 2e-3, 1e-3, 1e-3)
    coulomb: tuple[float, ...] = (0.04, 0.04, 0.3, 4e-3, 2e-3, 2e-3)
    coulomb_vel: float = 0.01
    gravity_scale: float = 1.0
    instrument_mass: float = 0.15
    arm_mass: float = 0.6
    arm_com: tuple[float, float, float] = (0.0, 0.03, 0.12)
    seal_insertion: BoucWen = BoucWen(amplitude=2.5, yield_disp=2e-3, viscous=3.0)
    seal_roll: BoucWen = BoucWen(amplitude=0.03, yield_disp=0.05, viscous=0.01)
    trocar_stiffness: float = 400.0
    trocar_damping: float = 20.0
    trocar_depth: float = 0.03
    trocar_tilt: tuple[float, float] = (0.12, -0.08)
    trocar_axial_friction: float = 0.6
    trocar_axial_coupling: float = 0.3
    noise_std: tuple[float, ...] = (0.01, 0.01, 0.05, 0.01, 0.01, 0.01)

    def __post_init__(self):
        for name in ("inertia", "viscous", "coulomb", "noise_std"):
            v = _vec6(getattr(self, name))
            if min(v) < 0:
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, v)
        for name in ("seal_insertion", "seal_roll"):
            v = getattr(self, name)
            if isinstance(v, dict):
                object.__setattr__(self, name, BoucWen(**v))
        scalars = ("gravity_scale", "instrument_mass", "arm_mass", "trocar_stiffness",
                   "trocar_damping", "trocar_depth", "trocar_axial_friction",
                   "trocar_axial_coupling", "coulomb_vel")
        for name in scalars:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        object.__setattr__(self, "arm_com", tuple(float(x) for x in self.arm_com))
        object.__setattr__(self, "trocar_tilt", tuple(float(x) for x in self.trocar_tilt))

    @classmethod
    def from_config(cls, cfg: dict | None) -> "DisturbanceModel":
        return cls(**dict(cfg or {}))

    def zero_gains(self, keep_rigid: bool = True) -> "DisturbanceModel":
        """Copy with friction, seal, trocar and noise switched off."""
        z6 = (0.0,) * 6
        return replace(
            self,
            inertia=self.inertia if keep_rigid else z6,
            gravity_scale=self.gravity_scale if keep_rigid else 0.0,
            viscous=z6, coulomb=z6, noise_std=z6,
            seal_insertion=replace(self.seal_insertion, amplitude=0.0, viscous=0.0),
            seal_roll=replace(self.seal_roll, amplitude=0.0, viscous=0.0),
            trocar_stiffness=0.0, trocar_damping=0.0,
            trocar_axial_friction=0.0, trocar_axial_coupling=0.0,
        )


@dataclass(frozen=True)
class ContactEvent:
    onset: float
    offset: float
    wrench: tuple[float, ...]
    ramp: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "wrench", _vec6(self.wrench))
        if not self.offset > self.onset:
            raise ValueError("contact offset must follow onset")

    def profile(self, t: np.ndarray) -> np.ndarray:
        """Raised-cosine envelope in [0, 1]."""
        r = max(min(self.ramp, 0.5 * (self.offset - self.onset)), 1e-9)
        up = np.clip((t - self.onset) / r, 0.0, 1.0)
        down = np.clip((self.offset - t) / r, 0.0, 1.0)
        return 0.5 - 0.5 * np.cos(np.pi * np.minimum(up, down))


@dataclass(frozen=True)
class ScenarioScript:
    """Motion family, condition and (optional) contact schedule for one run.

    ``amplitude`` is the fraction of each joint's half-range the motion may
    use.  For the contact family an empty schedule is filled with random
    presses (``contact_rate`` per minute, peak force/torque bounds).
    """

    family: Family = Family.WAYPOINTS
    condition: Condition = Condition.FREE_SPACE
    duration: float = 60.0
    amplitude: tuple[float, ...] = (0.9,) * 6
    segment_time: tuple[float, float] = (2.0, 4.0)
    schedule: tuple[ContactEvent, ...] = ()
    contact_rate: float = 6.0
    contact_force: float = 4.0
    contact_torque: float = 0.08
    contact_duration: tuple[float, float] = (2.0, 5.0)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "condition", Condition.parse(self.condition))
        object.__setattr__(self, "amplitude", _vec6(self.amplitude))
        object.__setattr__(self, "segment_time", tuple(float(x) for x in self.segment_time))
        object.__setattr__(self, "contact_duration", tuple(float(x) for x in self.contact_duration))
        sched = tuple(e if isinstance(e, ContactEvent) else ContactEvent(**e) for e in self.schedule)
        object.__setattr__(self, "schedule", sched)
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        if any(a < 0 or a > 1 for a in self.amplitude):
            raise ScenarioError("amplitude fractions must lie in [0, 1]")

    @classmethod
    def from_config(cls, cfg: dict) -> "ScenarioScript":
        return cls(**dict(cfg))

    def validate(self) -> None:
        contact = self.condition is Condition.TROCAR_CONTACT
        if self.schedule and not contact:
            raise ScenarioError("a contact schedule is only valid under the trocar-contact condition")
        if self.family is Family.CONTACT_PRESS and not contact:
            raise ScenarioError("contact-press scripts require the trocar-contact condition")
        if contact and self.family is not Family.CONTACT_PRESS:
            raise ScenarioError("trocar-contact condition requires the contact-press family")


# ------------------------------------------------------------------- motion


class Motion:
    """Analytic joint trajectory: ``evaluate(t) -> (q, qd, qdd)``."""

    def evaluate(self, t: np.ndarray):  # pragma: no cover - interface
        raise NotImplementedError


@dataclass
class LissajousMotion(Motion):
    center: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)[:, None]
        w = 2 * np.pi * self.freq
        arg = w * t + self.phase
        q = self.center + self.amp * np.sin(arg)
        qd = self.amp * w * np.cos(arg)
        qdd = -self.amp * w ** 2 * np.sin(arg)
        return q, qd, qdd


@dataclass
class QuinticWaypointMotion(Motion):
    """C2 piecewise quintic through waypoints (Catmull-Rom knot velocities, zero knot accelerations)."""

    knots: np.ndarray       # (K,)
    points: np.ndarray      # (K, 6)
    velocities: np.ndarray  # (K, 6)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.knots) - 2)
        T = (self.knots[k + 1] - self.knots[k])[:, None]
        s = ((t - self.knots[k])[:, None]) / T
        p0, p1 = self.points[k], self.points[k + 1]
        v0, v1 = self.velocities[k] * T, self.velocities[k + 1] * T
        # quintic Hermite basis with zero end accelerations
        h = [1 - 10 * s**3 + 15 * s**4 - 6 * s**5,
             s - 6 * s**3 + 8 * s**4 - 3 * s**5,
             -4 * s**3 + 7 * s**4 - 3 * s**5,
             10 * s**3 - 15 * s**4 + 6 * s**5]
        dh = [-30 * s**2 + 60 * s**3 - 30 * s**4,
              1 - 18 * s**2 + 32 * s**3 - 15 * s**4,
              -12 * s**2 + 28 * s**3 - 15 * s**4,
              30 * s**2 - 60 * s**3 + 30 * s**4]
        ddh = [-60 * s + 180 * s**2 - 120 * s**3,
               -36 * s + 96 * s**2 - 60 * s**3,
               -24 * s + 84 * s**2 - 60 * s**3,
               60 * s - 180 * s**2 + 120 * s**3]
        q = h[0] * p0 + h[1] * v0 + h[2] * v1 + h[3] * p1
        qd = (dh[0] * p0 + dh[1] * v0 + dh[2] * v1 + dh[3] * p1) / T
        qdd = (ddh[0] * p0 + ddh[1] * v0 + ddh[2] * v1 + ddh[3] * p1) / T**2
        return q, qd, qdd


def _workspace(model: KinematicModel, amplitude) -> tuple[np.ndarray, np.ndarray]:
    mid = 0.5 * (model.lower + model.upper)
    half = 0.5 * (model.upper - model.lower) * np.asarray(amplitude)
    return mid, half


def build_motion(model: KinematicModel, script: ScenarioScript, rng: np.random.Generator) -> Motion:
    mid, half = _workspace(model, script.amplitude)
    if script.family is Family.LISSAJOUS:
        freq = rng.uniform(0.05, 0.25, size=6)
        phase = rng.uniform(0, 2 * np.pi, size=6)
        return LissajousMotion(mid, half, freq, phase)
    lo, hi = script.segment_time
    knots = [0.0]
    while knots[-1] < script.duration + 1.0:
        knots.append(knots[-1] + rng.uniform(lo, hi))
    knots = np.array(knots)
    # 0.85 keeps quintic overshoot inside the amplitude box
    pts = mid + 0.85 * half * rng.uniform(-1.0, 1.0, size=(len(knots), 6))
    pts[0] = mid + 0.5 * (pts[0] - mid)
    vel = np.zeros_like(pts)
    vel[1:-1] = (pts[2:] - pts[:-2]) / (knots[2:] - knots[:-2])[:, None]
    return QuinticWaypointMotion(knots, pts, vel)


def random_schedule(script: ScenarioScript, rng: np.random.Generator) -> tuple[ContactEvent, ...]:
    events = []
    n = max(1, int(round(script.contact_rate * script.duration / 60.0)))
    slot = script.duration / n
    for i in range(n):
        dur = min(rng.uniform(*script.contact_duration), 0.8 * slot)
        start = i * slot + rng.uniform(0.1 * slot, slot - dur)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        f = direction * rng.uniform(0.3, 1.0) * script.contact_force
        tq = rng.uniform(-1.0, 1.0, size=3) * script.contact_torque
        events.append(ContactEvent(start, start + dur, tuple(np.concatenate([f, tq]))))
    return tuple(events)


def contact_wrench(schedule, t: np.ndarray) -> np.ndarray:
    w = np.zeros((len(t), 6))
    for ev in schedule:
        w += ev.profile(t)[:, None] * np.asarray(ev.wrench)
    return w


# ----------------------------------------------------------------- dynamics


def rigid_body_torque(model: KinematicModel, dist: DisturbanceModel, q, qdd) -> np.ndarray:
    """Diagonal inertia plus gravity holding torque, vectorized over samples."""
    q = np.atleast_2d(q)
    tau = np.asarray(dist.inertia) * np.atleast_2d(qdd)
    return tau + gravity_torque(model, dist, q)


def gravity_torque(model: KinematicModel, dist: DisturbanceModel, q) -> np.ndarray:
    q = np.atleast_2d(q)
    out = np.zeros((len(q), 6))
    if dist.gravity_scale == 0.0:
        return out
    g = GRAVITY * dist.gravity_scale
    com_arm = np.asarray(dist.arm_com)
    for k, qk in enumerate(q):
        st = chain(model, qk, check=False)
        depth = model.nominal_depth + qk[2]
        p_inst = model.rcm + (depth - 0.5 * model.shaft_length) * st.shaft_axis
        R2 = _pitch_rotation(qk)
        p_arm = model.rcm + R2 @ com_arm
        out[k] = -(point_jacobian(st, p_inst, (0, 1, 2)).T @ (dist.instrument_mass * g)
                   + point_jacobian(st, p_arm, (0, 1)).T @ (dist.arm_mass * g))
    return out


def _pitch_rotation(q) -> np.ndarray:
    return rot_x(q[0]) @ rot_y(q[1])


def friction_torque(dist: DisturbanceModel, qd) -> np.ndarray:
    qd = np.atleast_2d(qd)
    return np.asarray(dist.viscous) * qd + np.asarray(dist.coulomb) * np.tanh(qd / dist.coulomb_vel)


def bouc_wen_series(bw: BoucWen, x_at, t: np.ndarray, substeps: int = 4) -> np.ndarray:
    """Hysteretic state ``z`` at each time in ``t`` for displacement function ``x_at``.

    Integrates ``dz/dx`` with RK4 in the displacement domain; each sub-interval
    is short enough that motion direction is treated as constant.
    """
    z = np.zeros(len(t))
    if bw.amplitude == 0.0 or len(t) < 2:
        return z
    fine = np.concatenate([np.linspace(t[i], t[i + 1], substeps + 1)[:-1] for i in range(len(t) - 1)] + [t[-1:]])
    xs = x_at(fine)
    zc = 0.0
    limit = 0.5 * bw.yield_disp
    for j in range(1, len(xs)):
        dx_total = xs[j] - xs[j - 1]
        if dx_total != 0.0:
            m = max(1, int(math.ceil(abs(dx_total) / limit)))
            h = dx_total / m
            sgn = 1.0 if h > 0 else -1.0
            for _ in range(m):
                k1 = bw.slope(zc, sgn)
                k2 = bw.slope(zc + 0.5 * h * k1, sgn)
                k3 = bw.slope(zc + 0.5 * h * k2, sgn)
                k4 = bw.slope(zc + h * k3, sgn)
                zc += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if j % substeps == 0:
            z[j // substeps] = zc
    return z


def trocar_torque(model: KinematicModel, dist: DisturbanceModel, q, qd) -> np.ndarray:
    """Body-wall spring-damper acting laterally on the shaft, plus axial port friction."""
    q = np.atleast_2d(q)
    qd = np.atleast_2d(qd)
    out = np.zeros((len(q), 6))
    if dist.trocar_stiffness == 0 and dist.trocar_damping == 0 and dist.trocar_axial_friction == 0:
        return out
    port_axis = -(rot_x(dist.trocar_tilt[0]) @ rot_y(dist.trocar_tilt[1]))[:, 2]
    s = dist.trocar_depth
    for k in range(len(q)):
        st = chain(model, q[k], check=False)
        d = st.shaft_axis
        p = model.rcm + s * d
        Jp = point_jacobian(st, p, (0, 1))
        v = Jp @ qd[k]
        dev = s * (d - port_axis)
        dev_lat = dev - (dev @ d) * d
        v_lat = v - (v @ d) * d
        f = dist.trocar_stiffness * dev_lat + dist.trocar_damping * v_lat
        out[k] = Jp.T @ f
        fa = dist.trocar_axial_friction + dist.trocar_axial_coupling * np.linalg.norm(f)
        out[k, 2] += fa * math.tanh(qd[k, 2] / dist.coulomb_vel)
    return out


def seal_torque(dist: DisturbanceModel, motion: Motion, t: np.ndarray, qd: np.ndarray) -> np.ndarray:
    out = np.zeros((len(t), 6))
    for j, bw in ((2, dist.seal_insertion), (3, dist.seal_roll)):
        z = bouc_wen_series(bw, lambda tt, j=j: motion.evaluate(tt)[0][:, j], t)
        out[:, j] = bw.amplitude * z + bw.viscous * qd[:, j]
    return out


def internal_components(model, dist, condition: Condition, motion: Motion, t) -> dict[str, np.ndarray]:
    q, qd, qdd = motion.evaluate(t)
    comps = {
        "rigid": rigid_body_torque(model, dist, q, qdd),
        "friction": friction_torque(dist, qd),
        "seal": np.zeros_like(q),
        "trocar": np.zeros_like(q),
    }
    if condition is not Condition.FREE_SPACE:
        comps["seal"] = seal_torque(dist, motion, t, qd)
    if condition in (Condition.TROCAR, Condition.TROCAR_CONTACT):
        comps["trocar"] = trocar_torque(model, dist, q, qd)
    return comps


def velocity_estimate(q, rate: float, cutoff: float = 20.0) -> np.ndarray:
    """Causal first-order low-pass of backward differences (no lookahead).

    The filter state starts at zero; the first sample reports zero velocity.
    """
    q = np.asarray(q, dtype=float)
    squeeze = q.ndim == 1
    q2 = q[:, None] if squeeze else q
    if len(q2) < 2:
        raise ValueError("velocity estimate needs at least 2 samples")
    if rate <= 0 or cutoff <= 0:
        raise ValueError("rate and cutoff must be positive")
    raw = np.zeros_like(q2)
    raw[1:] = np.diff(q2, axis=0) * rate
    alpha = 1.0 - math.exp(-2 * math.pi * cutoff / rate)
    out = np.empty_like(q2)
    y = np.zeros(q2.shape[1])
    for k in range(len(q2)):
        y = y + alpha * (raw[k] - y)
        out[k] = y
    return out[:, 0] if squeeze else out


def generate(model: KinematicModel, dist: DisturbanceModel, script: ScenarioScript,
             seed: int, rate: float = 200.0, velocity: str = "estimated",
             cutoff: float = 20.0) -> Trajectory:
    """Simulate one trajectory of telemetry.

    Random streams for motion, contact schedule and measurement noise are
    spawned from ``seed`` independently of the condition, so the same seed
    yields the same joint path (and noise) with or without contact.
    """
    script.validate()
    if not rate > 0:
        raise ScenarioError("rate must be positive")
    n = int(round(script.duration * rate))
    if n < 2:
        raise ScenarioError("duration too short for the sampling rate")
    motion_ss, contact_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    rng_motion = np.random.default_rng(motion_ss)
    family = Family.WAYPOINTS if script.family is Family.CONTACT_PRESS else script.family
    motion = build_motion(model, replace(script, family=family, schedule=()), rng_motion)
    t = np.arange(n) / rate
    q, qd_true, _ = motion.evaluate(t)
    lo, hi = model.lower, model.upper
    if np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12):
        raise ScenarioError("scripted motion leaves the joint limits; reduce amplitude")
    comps = internal_components(model, dist, script.condition, motion, t)
    tau = sum(comps.values())
    wrench = None
    if script.condition is Condition.TROCAR_CONTACT:
        schedule = script.schedule or random_schedule(script, np.random.default_rng(contact_ss))
        wrench = contact_wrench(schedule, t)
        for k in range(n):
            if np.any(wrench[k]):
                tau[k] += jacobian(model, q[k]).T @ wrench[k]
    noise = np.random.default_rng(noise_ss).normal(size=(n, 6)) * np.asarray(dist.noise_std)
    tau = tau + noise
    if velocity == "estimated":
        qdot = velocity_estimate(q, rate, cutoff)
    elif velocity == "exact":
        qdot = qd_true
    else:
        raise ValueError(f"unknown velocity source {velocity!r}")
    return Trajectory(t, q, qdot, tau, script.condition, wrench)


def default_script(condition: Condition, duration: float) -> ScenarioScript:
    """Condition-appropriate motion: the trocar workspace is a strict subset of free space."""
    condition = Condition.parse(condition)
    if condition is Condition.TROCAR_CONTACT:
        return ScenarioScript(Family.CONTACT_PRESS, condition, duration, amplitude=(0.45, 0.45, 0.5, 0.5, 0.5, 0.5))
    if condition is Condition.TROCAR:
        return ScenarioScript(Family.WAYPOINTS, condition, duration, amplitude=(0.5, 0.5, 0.6, 0.6, 0.6, 0.6))
    return ScenarioScript(Family.WAYPOINTS, condition, duration, amplitude=(0.9,) * 6)


__all__ = [
    "BoucWen", "ContactEvent", "DisturbanceModel", "Family", "ScenarioError", "ScenarioScript",
    "bouc_wen_series", "build_motion", "contact_wrench", "default_script", "friction_torque",
    "generate", "gravity_torque", "internal_components", "random_schedule", "rigid_body_torque",
    "seal_torque", "trocar_torque", "velocity_estimate",
]
