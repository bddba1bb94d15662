import json
import shutil

import numpy as np
import pytest
import yaml

import armctl
from armctl import dynamics as dyn
from armctl.cli import main as cli_main
from armctl.errors import CsvFormatError, NonMonotoneTime, ScenarioParseError
from armctl.geometry import matrix_to_quat
from armctl.harness import (
    Metrics,
    Scenario,
    bundled_scenario,
    compare,
    compute_metrics,
    load_target_csv,
    replay_policy_stream,
    run_scenario,
)


def scenario_dict(**overrides):
    base = {
        "version": 1,
        "name": "unit",
        "model": "planar3",
        "initial_q": [0.5, -0.4, 0.3],
        "duration": 1.0,
        "seed": 11,
        "controller": {"kp": [150.0] * 3 + [10.0] * 3, "kp_nullspace": 2.0,
                       "kd_nullspace": 1.0},
        "sim": {"dt": 0.001},
        "targets": {"type": "none"},
    }
    base.update(overrides)
    return base


def write_scenario(tmp_path, name="unit.scenario", **overrides):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(scenario_dict(**overrides)))
    return path


class TestScenarioLoading:
    def test_load_bundled(self):
        scenario = Scenario.load(bundled_scenario("step_response_ci"))
        assert scenario.model.dof == 7
        assert scenario.targets["type"] == "step_pose"

    def test_unknown_model_file(self, tmp_path):
        path = write_scenario(tmp_path, model="no_such_model.urdf")
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)

    def test_unknown_bundled_model(self, tmp_path):
        path = write_scenario(tmp_path, model="fr3000")
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)

    def test_version_required(self, tmp_path):
        path = write_scenario(tmp_path, version=99)
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "broken.scenario"
        path.write_text("version: [unclosed")
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)

    def test_random_walk_needs_rate(self, tmp_path):
        path = write_scenario(tmp_path, targets={"type": "random_walk", "rate_hz": 0})
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)

    def test_controller_params_file_reference(self, tmp_path):
        params_path = tmp_path / "gains.yaml"
        params_path.write_text(yaml.safe_dump({"kp": [120.0] * 3 + [9.0] * 3}))
        path = write_scenario(tmp_path, controller="gains.yaml")
        scenario = Scenario.load(path)
        assert scenario.params.kp[0] == 120.0

    def test_model_from_urdf_path(self, tmp_path):
        urdf = tmp_path / "arm.urdf"
        shutil.copyfile(armctl.fixture_path("planar2"), urdf)
        path = write_scenario(tmp_path, model="arm.urdf", initial_q=[0.1, 0.2])
        scenario = Scenario.load(path)
        assert scenario.model.dof == 2

    def test_initial_q_shape_checked(self, tmp_path):
        path = write_scenario(tmp_path, initial_q=[0.0, 0.0])
        with pytest.raises(ScenarioParseError):
            Scenario.load(path)


class TestMetrics:
    def test_steady_state_window_and_settling(self):
        from armctl.sim import TrajectoryLog

        n = 1000
        t = np.arange(n) * 1e-3
        e_pos = np.zeros((n, 3))
        e_pos[500:, 0] = 0.2 * np.exp(-(t[500:] - 0.5) / 0.05)
        log = TrajectoryLog(t, np.zeros((n, 1)), np.zeros((n, 1)),
                            np.full((n, 1), 2.0), np.zeros((n, 3)),
                            np.tile([1.0, 0, 0, 0], (n, 1)), e_pos, np.zeros((n, 3)))
        m = compute_metrics(log, step_time=0.5, step_magnitude=0.2)
        assert m.settling_time is not None
        # 0.2 exp(-dt/0.05) < 0.01 after dt = 0.05 ln(20) ~ 0.1498
        assert m.settling_time == pytest.approx(0.15, abs=2e-3)
        assert m.max_torque == 2.0
        window = np.linalg.norm(e_pos[900:], axis=1).mean()
        assert m.steady_state_pos_err == pytest.approx(window)

    def test_never_settles(self):
        from armctl.sim import TrajectoryLog

        n = 100
        log = TrajectoryLog(np.arange(n) * 1e-3, np.zeros((n, 1)), np.zeros((n, 1)),
                            np.zeros((n, 1)), np.zeros((n, 3)),
                            np.tile([1.0, 0, 0, 0], (n, 1)),
                            np.full((n, 3), 1.0), np.zeros((n, 3)))
        m = compute_metrics(log, step_time=0.0, step_magnitude=0.1)
        assert m.settling_time is None


class TestRunScenario:
    def test_bundled_step_response(self, tmp_path):
        scenario, log, metrics = run_scenario(bundled_scenario("step_response_ci"),
                                              out_dir=tmp_path, quiet=True)
        assert metrics.settling_time is not None and metrics.settling_time > 0.0
        assert np.isfinite(metrics.steady_state_pos_err)
        assert metrics.limit_breaches == 0
        out = tmp_path / "step_response_ci"
        assert (out / "log.csv").exists()
        data = json.loads((out / "metrics.json").read_text())
        assert data["settling_time"] == pytest.approx(metrics.settling_time)

    def test_csv_header_schema(self, tmp_path):
        _, log, _ = run_scenario(bundled_scenario("step_response_ci"),
                                 out_dir=tmp_path, quiet=True)
        header = (tmp_path / "step_response_ci" / "log.csv").read_text().splitlines()[0]
        assert header == ("t," + ",".join(f"q{i}" for i in range(7)) + ","
                          + ",".join(f"dq{i}" for i in range(7)) + ","
                          + ",".join(f"tau{i}" for i in range(7))
                          + ",x,y,z,qw,qx,qy,qz,epx,epy,epz,erx,ery,erz")

    def test_clipped_beats_plain_ci(self, tmp_path):
        _, _, plain = run_scenario(bundled_scenario("step_response_ci"),
                                   out_dir=tmp_path, quiet=True)
        _, _, clipped = run_scenario(bundled_scenario("step_response_ci_clipped"),
                                     out_dir=tmp_path, quiet=True)
        assert clipped.steady_state_pos_err < plain.steady_state_pos_err
        assert clipped.steady_state_rot_err < plain.steady_state_rot_err

    def test_deterministic_artifacts(self, tmp_path):
        run_scenario(bundled_scenario("stream_10hz"), out_dir=tmp_path / "a", quiet=True)
        run_scenario(bundled_scenario("stream_10hz"), out_dir=tmp_path / "b", quiet=True)
        for rel in ("stream_10hz/log.csv", "stream_10hz/metrics.json"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


class TestCompare:
    def test_three_way_table(self, tmp_path):
        results, table = compare([bundled_scenario("step_response_ci"),
                                  bundled_scenario("step_response_osc"),
                                  bundled_scenario("step_response_ci_clipped")],
                                 out_dir=tmp_path, quiet=True)
        by_name = {s.name: m for s, _, m in results}
        assert by_name["step_response_ci_clipped"].steady_state_pos_err < \
            by_name["step_response_ci"].steady_state_pos_err
        assert "step_response_osc" in table
        assert (tmp_path / "compare" / "errors.csv").exists()

    def test_single_scenario_rejected(self, tmp_path):
        with pytest.raises(ScenarioParseError):
            compare([bundled_scenario("step_response_ci")], out_dir=tmp_path)

    def test_identical_scenarios_identical_rows(self, tmp_path):
        _, table = compare([bundled_scenario("step_response_ci"),
                            bundled_scenario("step_response_ci")],
                           out_dir=tmp_path, quiet=True)
        rows = [r for r in table.splitlines() if r.startswith("step_response_ci")]
        assert len(rows) == 2 and rows[0] == rows[1]

    def test_mixed_models_rejected(self, tmp_path):
        other = write_scenario(tmp_path, name="other.scenario", model="planar2",
                               initial_q=[0.1, 0.2])
        with pytest.raises(ScenarioParseError):
            compare([bundled_scenario("step_response_ci"), other], out_dir=tmp_path)


class TestReplay:
    def make_stream_csv(self, tmp_path, poses):
        rows = ["t,x,y,z,qw,qx,qy,qz"]
        for t, pos, quat in poses:
            rows.append(",".join(repr(float(v)) for v in (t, *pos, *quat)))
        path = tmp_path / "stream.csv"
        path.write_text("\n".join(rows) + "\n")
        return path

    def test_single_pose_at_start_is_quiet(self, tmp_path, generic7):
        q0 = [0.0, 0.6, 0.0, -1.2, 0.0, 0.9, 0.5]
        pose = dyn.forward_kinematics(generic7, q0)
        csv = self.make_stream_csv(tmp_path, [(0.0, pose.position,
                                               matrix_to_quat(pose.rotation))])
        scenario = write_scenario(tmp_path, model="generic7", initial_q=q0,
                                  duration=1.0)
        _, log, metrics = replay_policy_stream(csv, scenario, out_dir=tmp_path,
                                               quiet=True)
        assert np.linalg.norm(log.e_pos, axis=1).max() < 1e-6
        assert metrics.limit_breaches == 0

    def test_multirate_streams_stable(self, tmp_path, generic7):
        q0 = [0.0, 0.6, 0.0, -1.2, 0.0, 0.9, 0.5]
        start = dyn.forward_kinematics(generic7, q0)
        rng = np.random.default_rng(2)
        metrics = {}
        for rate in (5.0, 30.0):
            poses = []
            offset = np.zeros(3)
            for k in range(int(rate * 2)):
                offset = np.clip(offset + rng.uniform(-0.02, 0.02, 3), -0.1, 0.1)
                poses.append((k / rate, start.position + offset,
                              matrix_to_quat(start.rotation)))
            csv = self.make_stream_csv(tmp_path, poses)
            scenario = write_scenario(tmp_path, model="generic7", initial_q=q0,
                                      duration=2.5)
            _, log, m = replay_policy_stream(csv, scenario, out_dir=tmp_path,
                                             quiet=True)
            assert m.limit_breaches == 0
            assert m.torque_clamp_ticks == 0
            metrics[rate] = m
        assert np.isfinite(metrics[5.0].steady_state_pos_err)
        assert np.isfinite(metrics[30.0].steady_state_pos_err)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,x,y,z\n0,0,0,0\n")
        with pytest.raises(CsvFormatError):
            load_target_csv(path)

    def test_non_monotone_time(self, tmp_path):
        path = tmp_path / "back.csv"
        path.write_text("t,x,y,z,qw,qx,qy,qz\n"
                        "1.0,0,0,0,1,0,0,0\n"
                        "0.5,0,0,0,1,0,0,0\n")
        with pytest.raises(NonMonotoneTime):
            load_target_csv(path)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("t,x,y,z,qw,qx,qy,qz\n1.0,0,0,0\n")
        with pytest.raises(CsvFormatError):
            load_target_csv(path)


@pytest.fixture(scope="module")
def lf_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("lf")
    scenario, log, metrics = run_scenario(bundled_scenario("leader_follower"),
                                          out_dir=out, quiet=True)
    return out / "leader_follower", scenario, log, metrics


class TestLeaderFollower:

    def test_bounded_tracking_no_breaches(self, lf_out):
        _, _, log, metrics = lf_out
        assert metrics.limit_breaches == 0
        assert np.linalg.norm(log.e_pos, axis=1).max() < 0.25

    def test_feedback_law_on_logs(self, lf_out, generic7):
        out, scenario, _, _ = lf_out
        fb = np.loadtxt(out / "feedback.csv", delimiter=",", skiprows=1)
        lead = np.loadtxt(out / "leader_log.csv", delimiter=",", skiprows=1)
        kp_fb = scenario.targets["fb_kp"]
        kd_fb = scenario.targets["fb_kd"]
        for k in range(0, fb.shape[0], 997):
            wrench, dq, tau_fb = fb[k, 1:7], fb[k, 7:14], fb[k, 14:21]
            q = lead[k, 1:8]
            J = dyn.geometric_jacobian(generic7, q).matrix
            expected = -kp_fb * (J.T @ wrench) - kd_fb * dq
            assert np.abs(expected - tau_fb).max() < 1e-10

    def test_zero_disturbance_is_pure_damping(self, lf_out, generic7):
        out, scenario, _, _ = lf_out
        fb = np.loadtxt(out / "feedback.csv", delimiter=",", skiprows=1)
        kd_fb = scenario.targets["fb_kd"]
        # disturbance is scheduled on [3, 5): outside it the wrench is zero
        early = fb[fb[:, 0] < 2.9]
        assert np.abs(early[:, 1:7]).max() == 0.0
        assert np.abs(early[:, 14:21] + kd_fb * early[:, 7:14]).max() < 1e-12

    def test_disturbance_reflected_to_leader(self, lf_out):
        out, _, _, _ = lf_out
        fb = np.loadtxt(out / "feedback.csv", delimiter=",", skiprows=1)
        during = fb[(fb[:, 0] >= 3.1) & (fb[:, 0] < 4.9)]
        assert np.abs(during[:, 1:7]).max() > 0.0
        assert np.abs(during[:, 14:21]).max() > 1e-3

    def test_targets_csv_replays_unchanged(self, lf_out, tmp_path):
        out, _, _, _ = lf_out
        scenario = write_scenario(tmp_path, model="generic7",
                                  initial_q=[0.0, 0.6, 0.0, -1.2, 0.0, 0.9, 0.5],
                                  duration=2.0)
        _, log, metrics = replay_policy_stream(out / "targets.csv", scenario,
                                               out_dir=tmp_path, quiet=True)
        assert metrics.limit_breaches == 0
        assert np.all(np.isfinite(log.e_pos))


class TestCli:
    def test_run_exit_zero(self, tmp_path, capsys):
        code = cli_main(["--out", str(tmp_path), "--quiet", "run",
                         str(bundled_scenario("step_response_ci"))])
        assert code == 0

    def test_bundled_name_resolution(self, tmp_path):
        code = cli_main(["--out", str(tmp_path), "--quiet", "run", "stream_10hz"])
        assert code == 0

    def test_parse_error_exit_two(self, tmp_path, capsys):
        bad = write_scenario(tmp_path, model="missing.urdf")
        assert cli_main(["--out", str(tmp_path), "run", str(bad)]) == 2

    def test_unknown_scenario_exit_two(self, tmp_path):
        assert cli_main(["--out", str(tmp_path), "run", "nope.scenario"]) == 2

    def test_compare_single_input_usage_error(self, tmp_path):
        code = cli_main(["--out", str(tmp_path), "compare",
                         str(bundled_scenario("step_response_ci"))])
        assert code == 2

    def test_replay(self, tmp_path, generic7):
        q0 = [0.0, 0.6, 0.0, -1.2, 0.0, 0.9, 0.5]
        pose = dyn.forward_kinematics(generic7, q0)
        csv = tmp_path / "s.csv"
        quat = matrix_to_quat(pose.rotation)
        csv.write_text("t,x,y,z,qw,qx,qy,qz\n"
                       + ",".join(repr(float(v))
                                  for v in (0.0, *pose.position, *quat)) + "\n")
        scenario = write_scenario(tmp_path, model="generic7", initial_q=q0,
                                  duration=0.5)
        code = cli_main(["--out", str(tmp_path), "--quiet", "replay", str(csv),
                         str(scenario)])
        assert code == 0

    def test_replay_bad_csv_exit_two(self, tmp_path):
        csv = tmp_path / "bad.csv"
        csv.write_text("bogus\n")
        scenario = write_scenario(tmp_path)
        assert cli_main(["--out", str(tmp_path), "replay", str(csv),
                         str(scenario)]) == 2

    def test_validate(self, capsys):
        code = cli_main(["validate", str(armctl.fixture_path("generic7"))])
        assert code == 0
        out = capsys.readouterr().out
        assert "dof: 7" in out

    def test_validate_broken_urdf_exit_two(self, tmp_path):
        bad = tmp_path / "bad.urdf"
        bad.write_text("<robot><link name='a'/><link name='b'/></robot>")
        assert cli_main(["validate", str(bad)]) == 2

    def test_out_dir_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CRISP_OUT_DIR", str(tmp_path / "envout"))
        code = cli_main(["--quiet", "run", str(bundled_scenario("step_response_ci"))])
        assert code == 0
        assert (tmp_path / "envout" / "step_response_ci" / "log.csv").exists()

    def test_seed_override_changes_random_walk(self, tmp_path):
        for seed in ("1", "2"):
            assert cli_main(["--out", str(tmp_path / seed), "--seed", seed,
                             "--quiet", "run", "stream_10hz"]) == 0
        a = (tmp_path / "1" / "stream_10hz" / "log.csv").read_bytes()
        b = (tmp_path / "2" / "stream_10hz" / "log.csv").read_bytes()
        assert a != b
