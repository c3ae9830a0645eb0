import json
import socket

import numpy as np
import pytest

from pegmentor import cli, config, geometry as geo, sim


def run_cli(*argv):
    return cli.main(list(argv))


def test_demo_gen_writes_and_is_deterministic(tmp_path, capsys):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    assert run_cli("demo-gen", "--n", "100", "--seed", "5", "--out", str(a)) == 0
    assert run_cli("demo-gen", "--n", "100", "--seed", "5", "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()
    episodes, _, _ = sim.load_episodes(a)
    assert len(episodes) == 100 and all(ep.success for ep in episodes)


def test_demo_gen_zero_is_usage_error(tmp_path):
    assert run_cli("demo-gen", "--n", "0", "--seed", "5",
                   "--out", str(tmp_path / "x.jsonl")) == 1


def test_unknown_flag_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.build_parser().parse_args(["demo-gen", "--n", "1", "--seed", "1",
                                       "--out", "x", "--bogus"])
    assert exc.value.code == 1


def test_train_smoke_and_best3(tmp_path, capsys):
    demos = tmp_path / "demos.jsonl"
    run_cli("demo-gen", "--n", "5", "--seed", "5", "--out", str(demos))
    capsys.readouterr()  # drop the demo-gen line
    out_dir = tmp_path / "runs"
    code = run_cli("train", "--demos", str(demos), "--out", str(out_dir),
                   "--seeds", "1,2,3", "--sequential", "--json",
                   "--set", "train.epochs=0")
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["runs"]) == 3
    rates = [r["eval_success_rate"] for r in report["runs"]]
    assert report["best3_mean"] == pytest.approx(np.mean(rates))
    for r in report["runs"]:
        assert (out_dir / f"policy-seed{r['seed']}.pgm1").exists()
        assert (out_dir / f"stats-seed{r['seed']}.jsonl").exists()


def test_train_malformed_demos(tmp_path, capsys):
    demos = tmp_path / "demos.jsonl"
    run_cli("demo-gen", "--n", "2", "--seed", "5", "--out", str(demos))
    lines = demos.read_text().splitlines()
    lines[2] = lines[2][:-15]
    demos.write_text("\n".join(lines) + "\n")
    code = run_cli("train", "--demos", str(demos), "--out", str(tmp_path / "r"),
                   "--seeds", "1")
    assert code == 2
    assert "line 3" in capsys.readouterr().err


def test_eval_scripted_table_shape(capsys):
    code = run_cli("eval", "--checkpoint", "scripted", "--n-short", "20",
                   "--n-long", "20", "--seed", "7")
    assert code == 0
    out = capsys.readouterr().out
    assert "Short range" in out and "Long range" in out and "All" in out
    assert "100.0" in out

    code = run_cli("eval", "--checkpoint", "scripted", "--n-short", "10",
                   "--n-long", "0", "--seed", "7", "--json")
    assert code == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert rows[0]["success_rate"] == 1.0
    assert rows[-1]["distance"] == "All"


def test_eval_zero_trials_usage_error():
    assert run_cli("eval", "--checkpoint", "scripted", "--n-short", "0",
                   "--n-long", "0", "--seed", "7") == 1


def test_eval_bad_checkpoint(tmp_path):
    bad = tmp_path / "bad.pgm1"
    bad.write_bytes(b"garbage")
    assert run_cli("eval", "--checkpoint", str(bad), "--n-short", "5",
                   "--n-long", "0", "--seed", "7") == 2


def test_calibrate_exact_and_noisy(tmp_path, capsys):
    cfg = config.AppConfig()
    uv, _ = geo.project_points(cfg.rig.intrinsics, cfg.rig.left_pose,
                               cfg.board.peg_positions)
    intr = {"fx": 800.0, "fy": 800.0, "cx": 320.0, "cy": 240.0,
            "width": 640, "height": 480}
    intr_path = tmp_path / "intr.json"
    intr_path.write_text(json.dumps(intr))

    clicks = [{"world": list(w), "pixel": list(p)}
              for w, p in zip(cfg.board.peg_positions, uv)]
    clicks_path = tmp_path / "clicks.json"
    clicks_path.write_text(json.dumps(clicks))
    code = run_cli("calibrate", "--clicks", str(clicks_path), "--intrinsics",
                   str(intr_path), "--out", str(tmp_path / "cal.json"), "--json")
    assert code == 0
    assert json.loads(capsys.readouterr().out)["rms_error_px"] < 1e-6

    rng = np.random.default_rng(3)
    noisy = [{"world": list(w), "pixel": list(p + rng.uniform(-1, 1, 2))}
             for w, p in zip(cfg.board.peg_positions, uv)]
    clicks_path.write_text(json.dumps(noisy))
    code = run_cli("calibrate", "--clicks", str(clicks_path), "--intrinsics",
                   str(intr_path), "--out", str(tmp_path / "cal2.json"), "--json")
    assert code == 0
    rms = json.loads(capsys.readouterr().out)["rms_error_px"]
    assert 0.2 <= rms <= 1.5


def test_calibrate_too_few_and_degenerate(tmp_path):
    intr_path = tmp_path / "intr.json"
    intr_path.write_text(json.dumps({"fx": 800.0, "fy": 800.0, "cx": 320.0, "cy": 240.0}))
    clicks_path = tmp_path / "clicks.json"
    clicks_path.write_text(json.dumps([{"world": [0, 0, 0], "pixel": [1, 2]},
                                       {"world": [0.01, 0, 0], "pixel": [3, 2]}]))
    assert run_cli("calibrate", "--clicks", str(clicks_path), "--intrinsics",
                   str(intr_path), "--out", str(tmp_path / "c.json")) == 1

    line = [{"world": [0.01 * i, 0.0, 0.02], "pixel": [100 + 10 * i, 100]}
            for i in range(8)]
    clicks_path.write_text(json.dumps(line))
    assert run_cli("calibrate", "--clicks", str(clicks_path), "--intrinsics",
                   str(intr_path), "--out", str(tmp_path / "c.json")) == 2


def test_bench_overlay_single_repeat(tmp_path, capsys):
    out = tmp_path / "lat.csv"
    code = run_cli("bench-overlay", "--counts", "100", "--repeats", "1",
                   "--seed", "1", "--out", str(out), "--json")
    assert code == 0
    data = json.loads(capsys.readouterr().out)
    assert all(r["std_ms"] == 0.0 for r in data["rows"])
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "n_points,mean_ms,std_ms,repeats"
    assert len(lines) == 2


def test_bench_overlay_non_monotone_exits_nonzero(tmp_path, capsys, monkeypatch):
    from pegmentor import overlay

    def fake_bench(counts, repeats, seed, rig=None, style=None, warmup=5):
        rep = overlay.LatencyReport()
        rep.rows = [{"n_points": 100, "mean_ms": 5.0, "std_ms": 0.1, "repeats": repeats},
                    {"n_points": 200, "mean_ms": 3.0, "std_ms": 0.1, "repeats": repeats}]
        return rep

    monkeypatch.setattr(cli.overlay, "bench_overlay_latency", fake_bench)
    code = run_cli("bench-overlay", "--counts", "100,200", "--repeats", "2",
                   "--seed", "1", "--out", str(tmp_path / "l.csv"))
    assert code == 2
    assert "not monotone" in capsys.readouterr().err


def test_serve_bind_conflict(tmp_path):
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        assert run_cli("serve", "--bind", f"127.0.0.1:{port}") == 2
    finally:
        blocker.close()


def test_config_roundtrip_and_overrides(tmp_path):
    cfg = config.AppConfig()
    path = tmp_path / "cfg.json"
    config.save(path, cfg)
    loaded = config.load(path)
    assert loaded.episode.horizon == cfg.episode.horizon
    assert np.allclose(loaded.rig.left_pose.as_matrix(), cfg.rig.left_pose.as_matrix())

    tweaked = config.apply_overrides(loaded, ["episode.horizon=60",
                                              "train.epochs=3",
                                              "episode.range_mode=short"])
    assert tweaked.episode.horizon == 60
    assert tweaked.train.epochs == 3
    assert tweaked.episode.range_mode == "short"
    with pytest.raises(ValueError):
        config.apply_overrides(loaded, ["episode.bogus=1"])
    with pytest.raises(ValueError):
        config.apply_overrides(loaded, ["no_equals_sign"])
