import numpy as np
import pytest

from pegmentor import agent, config, geometry as geo, overlay, service, sim
from pegmentor.errors import MalformedFile


class ScriptedPolicy:
    """Callable (state, goal) -> Action wrapper for the demonstration FSM."""

    def __init__(self, ep_cfg):
        self.ep_cfg = ep_cfg

    def __call__(self, state, goal):
        return sim.scripted_policy(state, goal, self.ep_cfg)


@pytest.fixture
def svc():
    cfg = config.AppConfig()
    return service.MentorService(cfg, policy=ScriptedPolicy(cfg.episode))


@pytest.fixture
def session(svc):
    return svc.create_session()


def exact_click_pixels(session):
    uv, z = geo.project_points(session.cfg.rig.intrinsics, session.cfg.rig.left_pose,
                               session.landmarks())
    assert np.all(z > 0)
    return uv


def calibrate_exactly(svc, session):
    for u, v in exact_click_pixels(session):
        out = svc.handle_message(session, {"type": "click", "u": float(u), "v": float(v)})
    return out[-1]


def test_twelve_exact_clicks_solve(svc, session):
    msg = calibrate_exactly(svc, session)
    assert msg["type"] == "calibration"
    assert msg["solved"] and msg["n_clicks"] == 12
    assert msg["rms_error_px"] < 1e-6
    # recovered pose matches the true rig pose
    true = session.cfg.rig.left_pose
    assert np.linalg.norm(session.calibration.pose.translation - true.translation) < 1e-6


def test_click_progress_counts(svc, session):
    uv = exact_click_pixels(session)
    for i in range(3):
        out = svc.handle_message(session, {"type": "click",
                                           "u": float(uv[i, 0]), "v": float(uv[i, 1])})
    assert out == [{"type": "calibration", "n_clicks": 3, "solved": False}]


def test_three_clicks_then_solve_surfaces_warning(svc, session):
    uv = exact_click_pixels(session)
    for i in (0, 5, 10):  # non-collinear pegs
        svc.handle_message(session, {"type": "click",
                                     "u": float(uv[i, 0]), "v": float(uv[i, 1])})
    # only 3 of the first landmarks clicked; pair order maps them to marks
    # 0,1,2 (collinear row), so the solver reports degenerate geometry
    out = svc.handle_message(session, {"type": "solve_calibration"})
    assert out[0]["type"] == "error"
    assert out[0]["code"] == "degenerate_geometry"


def test_solve_with_three_noncollinear_warns(svc):
    # board rotated into the click order so the first three marks are spread
    cfg = config.AppConfig()
    order = [0, 3, 9] + [i for i in range(12) if i not in (0, 3, 9)]
    board = sim.PegBoard(cfg.board.peg_positions[order])
    cfg2 = config.AppConfig(board=board, rig=cfg.rig)
    svc2 = service.MentorService(cfg2, policy=None)
    s = svc2.create_session()
    uv = exact_click_pixels(s)
    for i in range(3):
        svc2.handle_message(s, {"type": "click", "u": float(uv[i, 0]), "v": float(uv[i, 1])})
    out = svc2.handle_message(s, {"type": "solve_calibration"})
    assert out[0]["type"] == "calibration" and out[0]["solved"]
    assert "warning" in out[0]


def test_click_wrong_mode(svc, session):
    svc.handle_message(session, {"type": "set_mode", "mode": "training"})
    out = svc.handle_message(session, {"type": "click", "u": 10.0, "v": 10.0})
    assert out[0] == {"type": "error", "code": "wrong_mode",
                      "detail": "clicks only register in calibrating mode, not training"}


def test_too_many_clicks(svc, session):
    calibrate_exactly(svc, session)
    out = svc.handle_message(session, {"type": "click", "u": 1.0, "v": 1.0})
    assert out[0]["code"] == "too_many_clicks"


def test_teleop_zero_action_advances_time(svc, session):
    svc.handle_message(session, {"type": "set_mode", "mode": "training"})
    before = session.deviation_m()
    out = svc.handle_message(session, {"type": "teleop", "dx": 0.0, "dy": 0.0,
                                       "dz": 0.0, "dyaw": 0.0, "j": 1.0})
    assert out[0]["type"] == "step"
    assert out[0]["reward"] == -1.0 and not out[0]["done"]
    assert session.state.timestep == 1
    assert out[0]["deviation_m"] == pytest.approx(before, abs=1e-12)


def test_teleop_wrong_mode(svc, session):
    out = svc.handle_message(session, {"type": "teleop", "dx": 0.0, "dy": 0.0,
                                       "dz": 0.0, "dyaw": 0.0, "j": 1.0})
    assert out[0]["code"] == "wrong_mode"


def test_teleop_replay_of_plan_keeps_deviation_tiny(svc, session):
    svc.handle_message(session, {"type": "reset", "seed": 7, "range_mode": "short"})
    svc.handle_message(session, {"type": "set_mode", "mode": "training"})
    plan = session.plan
    assert plan is not None
    last = None
    for i in range(1, plan.waypoints.shape[0]):
        delta = plan.waypoints[i] - plan.waypoints[i - 1]
        j = 1.0 if plan.jaw_hints[i] else -1.0
        out = svc.handle_message(session, {"type": "teleop", "dx": float(delta[0]),
                                           "dy": float(delta[1]), "dz": float(delta[2]),
                                           "dyaw": 0.0, "j": j})
        assert out[0]["type"] == "step"
        assert out[0]["deviation_m"] <= 1e-9
        last = out[0]
        if last["done"]:
            break
    assert last["is_success"]

    out = svc.handle_message(session, {"type": "teleop", "dx": 0.0, "dy": 0.0,
                                       "dz": 0.0, "dyaw": 0.0, "j": 1.0})
    assert out[0]["code"] == "episode_finished"


def test_guidance_requires_calibration_and_policy(svc, session):
    out = svc.handle_message(session, {"type": "toggle_guidance", "on": True})
    assert out[0]["code"] == "guidance_unavailable"
    calibrate_exactly(svc, session)
    out = svc.handle_message(session, {"type": "toggle_guidance", "on": True})
    assert out[0]["type"] == "state" and out[0]["guidance_on"]


def test_tick_frames_decode_and_toggle(svc, session):
    import base64

    calibrate_exactly(svc, session)
    svc.handle_message(session, {"type": "set_mode", "mode": "training"})
    svc.handle_message(session, {"type": "toggle_guidance", "on": True})
    frames = session.tick()
    assert [f["eye"] for f in frames] == ["left", "right"]
    assert frames[0]["tick"] == frames[1]["tick"]
    k = session.cfg.rig.intrinsics
    for f in frames:
        raw = base64.b64decode(f["data"])
        assert raw.startswith(b"P6\n")
        payload = raw.split(b"\n", 3)[3]
        assert len(payload) == k.width * k.height * 3

    # guidance off: frames revert to the raw scene
    svc.handle_message(session, {"type": "toggle_guidance", "on": False})
    off = session.tick()
    scene_l, _ = overlay.render_scene(session.state, session.cfg.board, session.cfg.rig)
    assert base64.b64decode(off[0]["data"]) == overlay.write_ppm(scene_l)


def test_tick_calibrating_shows_clicks(svc, session):
    uv = exact_click_pixels(session)
    svc.handle_message(session, {"type": "click", "u": float(uv[0, 0]), "v": float(uv[0, 1])})
    import base64
    frames = session.tick()
    raw = base64.b64decode(frames[0]["data"])
    scene_l, _ = overlay.render_scene(session.state, session.cfg.board, session.cfg.rig)
    assert raw != overlay.write_ppm(scene_l)  # the click dot is painted


def test_overlay_uses_calibrated_pose_not_truth(svc, session):
    # calibrate against clicks that are all shifted 25 px right: the solved
    # pose differs from the true rig, and the overlay must follow the clicks
    uv = exact_click_pixels(session)
    for u, v in uv:
        svc.handle_message(session, {"type": "click", "u": float(u + 25.0), "v": float(v)})
    assert session.calibration is not None
    rig = session.calibrated_rig()
    tip_true, _ = geo.project_points(session.cfg.rig.intrinsics,
                                     session.cfg.rig.left_pose,
                                     session.state.tool_tip.reshape(1, 3))
    tip_cal, _ = geo.project_points(rig.intrinsics, rig.left_pose,
                                    session.state.tool_tip.reshape(1, 3))
    assert tip_cal[0, 0] - tip_true[0, 0] == pytest.approx(25.0, abs=1.0)


def test_unknown_and_malformed_messages(svc, session):
    out = svc.handle_message(session, {"type": "warp_drive"})
    assert out[0]["code"] == "unknown_type"
    out = svc.handle_message(session, {"type": "click", "u": "left"})
    assert out[0]["code"] == "bad_field"
    out = svc.handle_message(session, {"type": "click"})
    assert out[0]["code"] == "missing_field"
    out = svc.handle_message(session, {"type": "reset", "bogus": 1})
    assert out[0]["code"] == "bad_field"
    out = svc.handle_message(session, "not a dict")
    assert out[0]["code"] == "bad_message"


def test_outbound_messages_reparse_as_json(svc, session):
    import json
    calibrate_exactly(svc, session)
    svc.handle_message(session, {"type": "set_mode", "mode": "training"})
    svc.handle_message(session, {"type": "toggle_guidance", "on": True})
    for msg in session.tick() + [session.state_message()]:
        again = json.loads(json.dumps(msg))
        assert again["type"] in ("frame", "state")


def test_reset_determinism_and_state_message(svc, session):
    out1 = svc.handle_message(session, {"type": "reset", "seed": 42, "range_mode": "short"})
    s1 = session.state.copy()
    svc.handle_message(session, {"type": "reset", "seed": 43})
    out2 = svc.handle_message(session, {"type": "reset", "seed": 42})
    assert np.array_equal(session.state.block_pos, s1.block_pos)
    assert out1[0]["type"] == "state" and out1[0]["range_mode"] == "short"
    assert out2[0]["episode_seed"] == 42


def test_save_load_state_roundtrip(tmp_path, svc, session):
    calibrate_exactly(svc, session)
    svc.handle_message(session, {"type": "reset", "seed": 5, "range_mode": "short"})
    svc.handle_message(session, {"type": "set_mode", "mode": "training"})
    for _ in range(3):
        svc.handle_message(session, {"type": "teleop", "dx": 0.002, "dy": 0.0,
                                     "dz": -0.001, "dyaw": 0.0, "j": 1.0})
    service.save_state(session, tmp_path)
    frags = service.load_state(tmp_path)
    cal, corrs = frags["calibration"], frags["correspondences"]
    assert np.allclose(cal.pose.as_matrix(), session.calibration.pose.as_matrix(),
                       atol=1e-12)
    assert len(corrs) == 12
    assert len(frags["episodes"][0].transitions) == 3


def test_save_load_policy_checkpoint_roundtrip(tmp_path):
    cfg = config.AppConfig()
    demos = sim.generate_demonstrations(5, cfg.episode, seed=3)
    ac, _ = agent.train(cfg.episode, demos, agent.TrainConfig(epochs=0, seed=1))
    svc2 = service.MentorService(cfg, policy=ac)
    s = svc2.create_session()
    service.save_state(s, tmp_path)
    frags = service.load_state(tmp_path)
    loaded = frags["policy"]

    state, goal = sim.reset(cfg.episode, 4)
    plan_loaded = agent.rollout_trajectory(loaded, state, goal, cfg.episode)
    # the loaded policy round-trips to an identical rollout
    svc3 = service.MentorService(cfg, policy=loaded)
    s3 = svc3.create_session()
    service.save_state(s3, tmp_path / "again")
    again = service.load_state(tmp_path / "again")["policy"]
    plan_again = agent.rollout_trajectory(again, state, goal, cfg.episode)
    assert np.array_equal(plan_loaded.waypoints, plan_again.waypoints)


def test_load_truncated_checkpoint_is_malformed(tmp_path):
    cfg = config.AppConfig()
    demos = sim.generate_demonstrations(3, cfg.episode, seed=3)
    ac, _ = agent.train(cfg.episode, demos, agent.TrainConfig(epochs=0, seed=1))
    svc2 = service.MentorService(cfg, policy=ac)
    s = svc2.create_session()
    service.save_state(s, tmp_path)
    ckpt = tmp_path / "policy.pgm1"
    ckpt.write_bytes(ckpt.read_bytes()[:100])
    with pytest.raises(MalformedFile):
        service.load_state(tmp_path)


def test_deviation_metric_geometry():
    wp = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
    assert service.point_to_polyline(np.array([0.5, 0.3, 0.0]), wp) == pytest.approx(0.3)
    assert service.point_to_polyline(np.array([2.0, 1.0, 0.0]), wp) == pytest.approx(1.0)
    assert service.point_to_polyline(np.array([0.0, 0.0, 0.0]), wp) == 0.0
