"""Scenario runner: reproducible closed-loop experiments with metrics.

Scenario files are YAML documents with a versioned schema (see
docs/scenarios.md); bundled ones live in armctl/scenarios/*.scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import dynamics, fixture_path
from .controllers import (
    Controller,
    ControllerParams,
    TargetCommand,
    leader_feedback_torque,
)
from .errors import CsvFormatError, NonMonotoneTime, ScenarioParseError
from .geometry import Pose, exp_so3, matrix_to_quat, quat_to_matrix
from .sim import Disturbance, SimConfig, SimState, TrajectoryLog, run_closed_loop, step
from .urdf import RobotModel, parse_urdf

SCENARIO_VERSION = 1

TARGETS_HEADER = "t,x,y,z,qw,qx,qy,qz"


def bundled_scenario(name: str):
    """Path to a bundled scenario, e.g. bundled_scenario('step_response_ci')."""
    from importlib import resources

    if not name.endswith(".scenario"):
        name += ".scenario"
    return resources.files(__package__) / "scenarios" / name


@dataclass
class Scenario:
    """Parsed scenario file: model, controller, sim config, target stream spec."""

    name: str
    model: RobotModel
    params: ControllerParams
    sim: SimConfig
    targets: dict
    duration: float
    seed: int = 0
    initial_q: np.ndarray | None = None
    source: Path | None = None

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except FileNotFoundError as exc:
            raise ScenarioParseError(f"scenario file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ScenarioParseError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ScenarioParseError(f"{path}: scenario must be a mapping")
        return cls.from_dict(data, base_dir=path.parent, source=path)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None,
                  source: Path | None = None) -> "Scenario":
        base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        version = data.get("version")
        if version != SCENARIO_VERSION:
            raise ScenarioParseError(f"unsupported scenario version {version!r}")
        try:
            name = data["name"]
            model_ref = data["model"]
            duration = float(data["duration"])
            targets = dict(data.get("targets") or {"type": "none"})
        except KeyError as exc:
            raise ScenarioParseError(f"scenario missing required key {exc}") from exc
        if duration <= 0.0:
            raise ScenarioParseError("duration must be > 0")

        model = _load_model(model_ref, base_dir)
        if "gravity" in data:
            model = model.with_gravity(data["gravity"])

        controller_ref = data.get("controller", {})
        if isinstance(controller_ref, str):
            params_path = _resolve(controller_ref, base_dir)
            if params_path is None:
                raise ScenarioParseError(f"controller params file not found: {controller_ref}")
            controller_ref = yaml.safe_load(params_path.read_text())
        try:
            params = ControllerParams.from_dict(controller_ref or {})
        except (ValueError, TypeError) as exc:
            raise ScenarioParseError(f"bad controller params: {exc}") from exc

        sim_data = dict(data.get("sim") or {})
        disturbances = [Disturbance(d["start"], d["end"], d["wrench"])
                        for d in sim_data.pop("disturbances", [])]
        try:
            sim = SimConfig(disturbances=disturbances, **sim_data)
            sim.validate()
        except (TypeError, ValueError) as exc:
            raise ScenarioParseError(f"bad sim config: {exc}") from exc

        kind = targets.get("type")
        if kind not in ("none", "step_pose", "random_walk", "replay", "leader_follower"):
            raise ScenarioParseError(f"unknown target stream type {kind!r}")
        if kind == "random_walk" and float(targets.get("rate_hz", 0.0)) <= 0.0:
            raise ScenarioParseError("random_walk requires rate_hz > 0")
        if kind == "replay":
            csv_ref = targets.get("csv")
            resolved = _resolve(csv_ref, base_dir) if csv_ref else None
            if resolved is None:
                raise ScenarioParseError(f"replay csv not found: {csv_ref}")
            targets["csv"] = str(resolved)

        initial_q = data.get("initial_q")
        if initial_q is not None:
            initial_q = np.asarray(initial_q, dtype=float)
            if initial_q.shape != (model.dof,):
                raise ScenarioParseError(
                    f"initial_q has shape {initial_q.shape}, expected ({model.dof},)")
        return cls(name=name, model=model, params=params, sim=sim, targets=targets,
                   duration=duration, seed=int(data.get("seed", 0)),
                   initial_q=initial_q, source=source)


def _resolve(ref, base_dir: Path) -> Path | None:
    p = Path(ref)
    if p.is_absolute():
        return p if p.exists() else None
    for candidate in (base_dir / p, Path.cwd() / p):
        if candidate.exists():
            return candidate
    return None


def _load_model(ref, base_dir: Path) -> RobotModel:
    if isinstance(ref, str) and not ref.endswith(".urdf"):
        try:
            return parse_urdf(fixture_path(ref).read_text())
        except FileNotFoundError as exc:
            raise ScenarioParseError(f"unknown bundled model {ref!r}") from exc
    path = _resolve(ref, base_dir)
    if path is None:
        raise ScenarioParseError(f"model file not found: {ref}")
    return parse_urdf(path.read_text())


@dataclass
class Metrics:
    """Summary statistics of one closed-loop run."""

    steady_state_pos_err: float
    steady_state_rot_err: float
    settling_time: float | None
    max_torque: float
    limit_breaches: int
    torque_clamp_ticks: int = 0

    def to_dict(self):
        return {
            "steady_state_pos_err": self.steady_state_pos_err,
            "steady_state_rot_err": self.steady_state_rot_err,
            "settling_time": self.settling_time,
            "max_torque": self.max_torque,
            "limit_breaches": self.limit_breaches,
            "torque_clamp_ticks": self.torque_clamp_ticks,
        }

    def one_line(self):
        settle = "n/a" if self.settling_time is None else f"{self.settling_time:.3f}s"
        return (f"ss_pos={self.steady_state_pos_err:.3e}m "
                f"ss_rot={self.steady_state_rot_err:.3e}rad "
                f"settle={settle} max_tau={self.max_torque:.2f}Nm "
                f"breaches={self.limit_breaches} clamps={self.torque_clamp_ticks}")


def compute_metrics(log: TrajectoryLog, step_time: float | None = None,
                    step_magnitude: float | None = None) -> Metrics:
    """Steady-state window is the final 10% of the run; settling threshold is
    5% of the commanded step magnitude, measured from the step instant."""
    n = log.t.shape[0]
    window = slice(max(n - max(n // 10, 1), 0), n)
    pos_norm = np.linalg.norm(log.e_pos, axis=1)
    rot_norm = np.linalg.norm(log.e_rot, axis=1)
    settling = None
    if step_time is not None and step_magnitude is not None and step_magnitude > 0.0:
        threshold = 0.05 * step_magnitude
        after = log.t >= step_time
        idx = np.nonzero(after)[0]
        if idx.size:
            below = pos_norm[idx] < threshold
            # first index from which the error stays below the threshold
            settled_from = None
            for j in range(below.size - 1, -1, -1):
                if not below[j]:
                    break
                settled_from = j
            if settled_from is not None:
                settling = float(log.t[idx[settled_from]] - step_time)
    return Metrics(
        steady_state_pos_err=float(pos_norm[window].mean()),
        steady_state_rot_err=float(rot_norm[window].mean()),
        settling_time=settling,
        max_torque=float(np.abs(log.tau).max()),
        limit_breaches=int(log.limit_breach_ticks),
        torque_clamp_ticks=int(log.torque_clamp_ticks),
    )


# --- target stream builders ---------------------------------------------------


def build_target_stream(scenario: Scenario):
    """Materialize the scenario's target stream.

    Returns (stream, step_time, step_magnitude); the step fields are None for
    non-step streams.
    """
    spec = scenario.targets
    kind = spec.get("type", "none")
    q0 = scenario.initial_q if scenario.initial_q is not None \
        else np.zeros(scenario.model.dof)
    start = dynamics.forward_kinematics(scenario.model, q0)
    rng = np.random.default_rng(scenario.seed)

    if kind == "none":
        return [], None, None
    if kind == "step_pose":
        t_step = float(spec.get("time", 1.0))
        if "offset_pos" in spec or "offset_rot" in spec:
            dp = np.asarray(spec.get("offset_pos", [0.0, 0.0, 0.0]), dtype=float)
            drot = np.asarray(spec.get("offset_rot", [0.0, 0.0, 0.0]), dtype=float)
        else:
            dp = rng.uniform(-1.0, 1.0, 3) * float(spec.get("pos_range", 0.1))
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            drot = axis * rng.uniform(0.0, float(spec.get("rot_range", 0.3)))
        target = Pose(start.position + dp, exp_so3(drot) @ start.rotation)
        stream = [(t_step, TargetCommand("target_pose", pose=target, stamp=t_step))]
        return stream, t_step, float(np.linalg.norm(dp))
    if kind == "random_walk":
        rate = float(spec["rate_hz"])
        pos_step = float(spec.get("pos_step", 0.02))
        rot_step = float(spec.get("rot_step", 0.04))
        pos_box = float(spec.get("pos_box", 0.12))
        rot_box = float(spec.get("rot_box", 0.4))
        t0 = float(spec.get("start_time", 0.5))
        offset = np.zeros(3)
        rot_offset = np.zeros(3)
        stream = []
        t = t0
        while t < scenario.duration:
            offset = np.clip(offset + rng.uniform(-pos_step, pos_step, 3),
                             -pos_box, pos_box)
            rot_offset = np.clip(rot_offset + rng.uniform(-rot_step, rot_step, 3),
                                 -rot_box, rot_box)
            pose = Pose(start.position + offset, exp_so3(rot_offset) @ start.rotation)
            stream.append((t, TargetCommand("target_pose", pose=pose, stamp=t)))
            t += 1.0 / rate
        return stream, None, None
    if kind == "replay":
        return load_target_csv(spec["csv"]), None, None
    raise ScenarioParseError(f"target stream type {kind!r} is not a closed-loop stream")


def load_target_csv(path):
    """Read a pose-target stream CSV (t,x,y,z,qw,qx,qy,qz) into commands."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0].strip() != TARGETS_HEADER:
        raise CsvFormatError(
            f"{path}: expected header {TARGETS_HEADER!r}, got {lines[0].strip() if lines else ''!r}")
    stream = []
    prev_t = -np.inf
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 8:
            raise CsvFormatError(f"{path}:{lineno}: expected 8 columns, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{lineno}: non-numeric value") from exc
        t = vals[0]
        if t < prev_t:
            raise NonMonotoneTime(f"{path}:{lineno}: time {t} < previous {prev_t}")
        prev_t = t
        pose = Pose(vals[1:4], quat_to_matrix(vals[4:8]))
        stream.append((t, TargetCommand("target_pose", pose=pose, stamp=t)))
    return stream


def write_target_csv(path, stream):
    rows = [TARGETS_HEADER]
    for t, cmd in stream:
        p = cmd.pose.position
        qw, qx, qy, qz = matrix_to_quat(cmd.pose.rotation)
        rows.append(",".join(repr(float(v)) for v in (t, p[0], p[1], p[2], qw, qx, qy, qz)))
    Path(path).write_text("\n".join(rows) + "\n")


# --- runners -------------------------------------------------------------------


def run_scenario(path, out_dir=None, seed=None, quiet=False):
    """Execute one scenario file; writes log.csv and metrics.json.

    Returns (scenario, log, metrics).
    """
    scenario = Scenario.load(path)
    if seed is not None:
        scenario.seed = int(seed)
    if scenario.targets.get("type") == "leader_follower":
        return run_leader_follower(scenario, out_dir=out_dir, quiet=quiet)
    stream, step_time, step_mag = build_target_stream(scenario)
    log = run_closed_loop(scenario.model, scenario.params, stream, scenario.duration,
                          scenario.sim, q0=scenario.initial_q)
    metrics = compute_metrics(log, step_time, step_mag)
    out = _output_dir(out_dir, scenario.name)
    log.write_csv(out / "log.csv")
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
    if not quiet:
        print(f"{scenario.name}: {metrics.one_line()}")
    return scenario, log, metrics


def replay_policy_stream(csv_path, scenario_path, out_dir=None, seed=None, quiet=False):
    """Stream recorded poses into a closed-loop run; reports Metrics."""
    scenario = Scenario.load(scenario_path)
    if seed is not None:
        scenario.seed = int(seed)
    stream = load_target_csv(csv_path)
    log = run_closed_loop(scenario.model, scenario.params, stream, scenario.duration,
                          scenario.sim, q0=scenario.initial_q)
    metrics = compute_metrics(log)
    out = _output_dir(out_dir, scenario.name)
    log.write_csv(out / "replay_log.csv")
    (out / "replay_metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
    if not quiet:
        print(f"replay[{Path(csv_path).name}] -> {scenario.name}: {metrics.one_line()}")
    return scenario, log, metrics


def compare(paths, out_dir=None, seed=None, quiet=False):
    """Run several scenarios over one model and tabulate their metrics.

    Writes a long-format error-vs-time data file for external plotting.
    """
    if len(paths) < 2:
        raise ScenarioParseError("compare needs at least two scenarios")
    results = []
    model_sig = None
    for path in paths:
        scenario, log, metrics = run_scenario(path, out_dir=out_dir, seed=seed, quiet=True)
        sig = (scenario.model.link_names, scenario.model.dof)
        if model_sig is None:
            model_sig = sig
        elif sig != model_sig:
            raise ScenarioParseError("compare requires scenarios sharing one model")
        results.append((scenario, log, metrics))

    out = _output_dir(out_dir, "compare")
    rows = ["scenario,t,e_pos,e_rot"]
    for scenario, log, _ in results:
        pos_norm = np.linalg.norm(log.e_pos, axis=1)
        rot_norm = np.linalg.norm(log.e_rot, axis=1)
        for k in range(log.t.shape[0]):
            rows.append(f"{scenario.name},{log.t[k]!r},{pos_norm[k]!r},{rot_norm[k]!r}")
    (out / "errors.csv").write_text("\n".join(rows) + "\n")

    header = f"{'scenario':<28} {'ss_pos[m]':>12} {'ss_rot[rad]':>12} " \
             f"{'settle[s]':>10} {'max_tau':>8} {'breach':>6}"
    lines = [header, "-" * len(header)]
    for scenario, _, m in results:
        settle = "n/a" if m.settling_time is None else f"{m.settling_time:.3f}"
        lines.append(f"{scenario.name:<28} {m.steady_state_pos_err:>12.3e} "
                     f"{m.steady_state_rot_err:>12.3e} {settle:>10} "
                     f"{m.max_torque:>8.2f} {m.limit_breaches:>6d}")
    table = "\n".join(lines)
    (out / "table.txt").write_text(table + "\n")
    if not quiet:
        print(table)
    return results, table


def run_leader_follower(scenario: Scenario, out_dir=None, quiet=False):
    """Two-arm teleoperation: scripted leader streams EE poses to the follower.

    The leader is driven by an operator impedance toward a scripted path plus
    the force-feedback term fed by the follower's wrench estimate. Emits
    synchronized logs plus the unified pose-target CSV that
    replay_policy_stream consumes unchanged.
    """
    spec = scenario.targets
    leader_model = _load_model(spec.get("leader_model", "generic7"),
                               scenario.source.parent if scenario.source else Path.cwd())
    rate = float(spec.get("stream_rate_hz", 30.0))
    fb_kp = float(spec.get("fb_kp", scenario.params.fb_kp))
    fb_kd = float(spec.get("fb_kd", scenario.params.fb_kd))
    amplitude = np.asarray(spec.get("amplitude", [0.08, 0.05]), dtype=float)
    period = float(spec.get("period", 4.0))

    leader_params = ControllerParams.from_dict(dict(spec.get("leader_controller", {})) or {
        "kp": [400.0, 400.0, 400.0, 25.0, 25.0, 25.0],
        "kp_nullspace": 2.0, "kd_nullspace": 1.0,
    })
    follower = Controller(scenario.model, scenario.params)
    leader = Controller(leader_model, leader_params)

    q0_f = scenario.initial_q if scenario.initial_q is not None \
        else np.zeros(scenario.model.dof)
    q0_l = np.asarray(spec.get("leader_initial_q", q0_f), dtype=float)
    dt = scenario.sim.dt
    n_ticks = int(round(scenario.duration / dt))
    sim_f = scenario.sim
    sim_l = SimConfig(dt=dt, gravity=sim_f.gravity,
                      joint_viscous_damping=sim_f.joint_viscous_damping,
                      integrator=sim_f.integrator)

    state_f = SimState.initial(scenario.model, q0_f)
    state_l = SimState.initial(leader_model, q0_l)
    start_l = dynamics.forward_kinematics(leader_model, q0_l)

    def script_pose(t):
        # figure-eight in the leader's y-z plane
        phase = 2.0 * np.pi * t / period
        dp = np.array([0.0,
                       amplitude[0] * np.sin(phase),
                       amplitude[1] * np.sin(2.0 * phase)])
        return Pose(start_l.position + dp, start_l.rotation)

    logs = {name: {"t": [], "q": [], "dq": [], "tau": [], "pos": [], "quat": [],
                   "epos": [], "erot": []} for name in ("leader", "follower")}
    fb_rows = []
    targets_stream = []
    breaches = clamps = 0
    next_sample = 0.0

    for k in range(n_ticks):
        t = k * dt
        leader.mailbox.put(TargetCommand("target_pose", pose=script_pose(t), stamp=t))
        tau_op = leader.compute_command(state_l.q, state_l.dq)
        J_l = dynamics.geometric_jacobian(leader_model, state_l.q)
        tau_fb = leader_feedback_torque(J_l, state_f.ee_wrench_estimate,
                                        state_l.dq, fb_kp, fb_kd)
        fb_rows.append((t, state_f.ee_wrench_estimate.copy(), state_l.dq.copy(),
                        tau_fb.copy()))
        tau_l = tau_op + tau_fb

        if t >= next_sample:
            pose_l = leader.last_pose
            targets_stream.append((t, TargetCommand("target_pose", pose=pose_l, stamp=t)))
            follower.mailbox.put(targets_stream[-1][1])
            next_sample += 1.0 / rate
        tau_f = follower.compute_command(state_f.q, state_f.dq)

        for name, ctrl, state, tau in (("leader", leader, state_l, tau_l),
                                       ("follower", follower, state_f, tau_f)):
            rec = logs[name]
            rec["t"].append(t)
            rec["q"].append(state.q.copy())
            rec["dq"].append(state.dq.copy())
            rec["tau"].append(np.asarray(tau, dtype=float).copy())
            rec["pos"].append(ctrl.last_pose.position.copy())
            rec["quat"].append(matrix_to_quat(ctrl.last_pose.rotation))
            rec["epos"].append(ctrl.last_error.e_pos.copy())
            rec["erot"].append(ctrl.last_error.e_rot.copy())

        state_l = step(leader_model, state_l, tau_l, sim_l)
        state_f = step(scenario.model, state_f, tau_f, sim_f)
        breaches += int(state_f.limit_breached) + int(state_l.limit_breached)
        clamps += int(state_f.torque_clamped)

    def to_log(rec, breach, clamp):
        return TrajectoryLog(np.array(rec["t"]), np.array(rec["q"]), np.array(rec["dq"]),
                             np.array(rec["tau"]), np.array(rec["pos"]),
                             np.array(rec["quat"]), np.array(rec["epos"]),
                             np.array(rec["erot"]), breach, clamp)

    log_f = to_log(logs["follower"], breaches, clamps)
    log_l = to_log(logs["leader"], 0, 0)
    out = _output_dir(out_dir, scenario.name)
    log_f.write_csv(out / "follower_log.csv")
    log_l.write_csv(out / "leader_log.csv")
    write_target_csv(out / "targets.csv", targets_stream)
    rows = ["t," + ",".join(f"w{i}" for i in range(6)) + ","
            + ",".join(f"dq{i}" for i in range(leader_model.dof)) + ","
            + ",".join(f"taufb{i}" for i in range(leader_model.dof))]
    for t, w, dq, tau_fb in fb_rows:
        rows.append(",".join(repr(float(v))
                             for v in [t, *w, *dq, *tau_fb]))
    (out / "feedback.csv").write_text("\n".join(rows) + "\n")

    metrics = compute_metrics(log_f)
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
    if not quiet:
        print(f"{scenario.name}: {metrics.one_line()}")
    return scenario, log_f, metrics


def _output_dir(out_dir, name) -> Path:
    import os

    root = Path(out_dir) if out_dir else Path(os.environ.get("CRISP_OUT_DIR", "out"))
    path = root / name
    path.mkdir(parents=True, exist_ok=True)
    return path
