import dataclasses as dc
import json

import numpy as np
import pytest

from safelane.harness.campaign import (SUMMARY_COLUMNS, ResultTable, read_csv, replicate_tag, run_campaign,
                                       run_eval_only, run_replicate)
from safelane.harness.cli import main
from safelane.harness.compare import GridMismatchError, compare_modes, nondecreasing
from safelane.harness.config import (CampaignConfig, ConfigError, RoadSettings, apply_overrides, dumps, loads,
                                     preset, resolve)
from safelane.harness.plotdata import SCHEMA, build_plot_data, emit_plot_data, load_plot_data
from safelane.traffic_env.metrics import CSV_COLUMNS

SMALL_ROAD = RoadSettings(length=200.0)


def tiny(mode="idm", **kw):
    base = dict(mode=mode, road=SMALL_ROAD, densities=(0.25,), seeds=(0,), episodes=2, epochs=5, eval_window=5,
                checkpoint_every=1)
    base.update(kw)
    return CampaignConfig(**base)


# campaigns ------------------------------------------------------------------------------------

def test_idm_tiny_scene_summary(tmp_path):
    cfg = tiny("idm", epochs=100, eval_window=100)
    table = run_campaign(cfg, tmp_path)
    rows = read_csv(tmp_path / "summary_idm.csv")
    assert len(rows) == 1 and tuple(rows[0]) == SUMMARY_COLUMNS
    assert int(rows[0]["n_vehicles"]) == 10
    assert int(rows[0]["total_overrides"]) == 0 and int(rows[0]["collisions"]) == 0
    assert table.rows[0]["eval_epochs"] == 100 and table.rows[0]["train_epochs"] == 0
    epochs = read_csv(tmp_path / "epochs" / f"{replicate_tag('idm', 0.25, 0)}.csv")
    assert tuple(epochs[0]) == CSV_COLUMNS and len(epochs) == 100


def test_same_seed_byte_identical_summary(tmp_path):
    cfg = tiny("feedback_rl", episodes=2, epochs=4, eval_epochs=3)
    run_campaign(cfg, tmp_path / "a")
    run_campaign(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "summary_feedback_rl.csv").read_bytes()
    b = (tmp_path / "b" / "summary_feedback_rl.csv").read_bytes()
    assert a == b
    for tag in ("epochs",):
        name = f"{replicate_tag('feedback_rl', 0.25, 0)}.csv"
        assert (tmp_path / "a" / tag / name).read_bytes() == (tmp_path / "b" / tag / name).read_bytes()


def test_different_seed_differs():
    a = run_campaign(tiny("idm", seeds=(0,))).csv_text()
    b = run_campaign(tiny("idm", seeds=(1,))).csv_text()
    assert a != b


def test_vanilla_terminates_on_collision():
    cfg = tiny("vanilla_rl", densities=(0.6,), episodes=3, epochs=10, eval_episodes=0)
    res = run_replicate(cfg, 0.6, 0)
    collisions = [r for r in res.train if r.collision]
    assert collisions
    for r in collisions:
        assert r.min_headway < 0
        # the collision epoch is the last recorded one of its episode
        same = [q for q in res.train if q.episode == r.episode]
        assert same[-1] is r


def test_feedback_training_keeps_headway_positive():
    cfg = tiny("feedback_rl", densities=(0.6,), episodes=3, epochs=10, eval_episodes=0)
    res = run_replicate(cfg, 0.6, 0)
    assert len(res.train) == 30
    assert all(r.min_headway > 0 and not r.collision for r in res.train)


def test_eval_window_uses_trailing_records():
    cfg = tiny("idm", epochs=12, eval_window=4)
    res = run_replicate(cfg, 0.25, 0)
    row = res.summary(4)
    assert row["mean_F"] == pytest.approx(np.mean([r.F for r in res.eval[-4:]]))
    assert row["mean_C"] == pytest.approx(np.mean([r.C for r in res.eval[-4:]]))


def test_resume_matches_uninterrupted(tmp_path):
    cfg = tiny("feedback_rl", episodes=4, epochs=4, eval_epochs=3)
    full = run_replicate(cfg, 0.25, 0, tmp_path / "full")
    part = run_replicate(cfg, 0.25, 0, tmp_path / "resumed", stop_after_episodes=2)
    assert len(part.train) == 8 and not part.eval
    resumed = run_replicate(cfg, 0.25, 0, tmp_path / "resumed")
    assert [dc.astuple(r) for r in resumed.train] == [dc.astuple(r) for r in full.train]
    assert [dc.astuple(r) for r in resumed.eval] == [dc.astuple(r) for r in full.eval]
    assert resumed.losses == full.losses
    name = f"epochs/{replicate_tag('feedback_rl', 0.25, 0)}.csv"
    assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "resumed" / name).read_bytes()


def test_eval_only_from_checkpoint(tmp_path):
    cfg = tiny("feedback_rl", episodes=1, epochs=3, eval_epochs=3)
    table = run_campaign(cfg, tmp_path)
    again = run_eval_only(cfg, tmp_path)
    assert again.rows[0]["mean_F"] == pytest.approx(table.rows[0]["mean_F"])
    with pytest.raises(FileNotFoundError):
        run_eval_only(dc.replace(cfg, seeds=(9,)), tmp_path)


# compare --------------------------------------------------------------------------------------

def fake_rows(mode, densities=(0.2, 0.4), seeds=(0, 1, 2), f=1.0, c=3.0, overrides=lambda d: int(d * 100)):
    return [{"density": d, "seed": s, "mode": mode, "n_vehicles": 10, "mean_F": f + 0.1 * s, "mean_C": c,
             "mean_reward": f + c, "total_overrides": overrides(d), "total_es": 0, "min_headway": 2.0,
             "collisions": 0, "train_epochs": 10, "eval_epochs": 5} for d in densities for s in seeds]


def test_compare_identical_inputs_zero_delta():
    rows = fake_rows("x")
    rep = compare_modes({"feedback_rl": rows, "idm": rows})
    for r in rep.rows:
        assert r.flow_delta.mean == 0 and r.flow_delta.std == 0 and r.comfort_delta.mean == 0


def test_compare_reports_configured_densities_only():
    rep = compare_modes({"feedback_rl": fake_rows("a", f=1.5), "idm": fake_rows("b")})
    assert rep.densities == (0.2, 0.4) and [r.density for r in rep.rows] == [0.2, 0.4]
    assert rep.rows[0].flow_delta.mean == pytest.approx(0.5)
    assert rep.rows[0].flow["idm"].std == pytest.approx(np.std([1.0, 1.1, 1.2]))
    assert rep.override_trend == {"feedback_rl": True}
    json.loads(rep.to_json())
    assert any("PASS" in line for line in rep.lines())


def test_compare_flags_decreasing_overrides():
    rep = compare_modes({"feedback_rl": fake_rows("a", overrides=lambda d: int(100 - 100 * d)),
                         "idm": fake_rows("b")})
    assert rep.override_trend == {"feedback_rl": False}


def test_compare_grid_mismatch():
    with pytest.raises(GridMismatchError):
        compare_modes({"feedback_rl": fake_rows("a", seeds=(0, 1)), "idm": fake_rows("b")})
    with pytest.raises(GridMismatchError):
        compare_modes({"feedback_rl": fake_rows("a", densities=(0.2,)), "idm": fake_rows("b")})
    with pytest.raises(KeyError):
        compare_modes({"idm": fake_rows("b")})


def test_nondecreasing():
    assert nondecreasing([1, 1, 2]) and not nondecreasing([2, 1])


# plot data ------------------------------------------------------------------------------------

def test_plotdata_single_density_and_roundtrip(tmp_path):
    cfg = tiny("idm", epochs=6)
    table = run_campaign(cfg)
    pd = emit_plot_data({"idm": table}, tmp_path / "p.json")
    s = pd.flow_vs_density["idm"]
    assert s.density == [0.25] and len(s.mean) == 1 and s.n == [1]
    assert len(pd.headway_vs_epoch) == 1 and len(pd.headway_vs_epoch[0].min_headway) == 6
    back = load_plot_data(tmp_path / "p.json")
    assert back == pd
    assert json.loads((tmp_path / "p.json").read_text())["schema"] == SCHEMA


def test_plotdata_schema_checked(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"schema": "other"}))
    with pytest.raises(ValueError):
        load_plot_data(p)
    with pytest.raises(ValueError):
        build_plot_data({})


def test_plotdata_nonfinite_headway_is_null():
    rows = fake_rows("idm", densities=(0.2,), seeds=(0,))
    pd = build_plot_data({"idm": rows}, traces={("idm", 0.2, 0): [{"min_headway": "inf"}, {"min_headway": 3.0}]})
    assert pd.headway_vs_epoch[0].min_headway == [None, 3.0]
    json.dumps(pd.to_dict(), allow_nan=False)


# config ---------------------------------------------------------------------------------------

def test_yaml_roundtrip_and_merge():
    cfg = tiny("feedback_rl", eval_epochs=7)
    assert loads(dumps(cfg)) == cfg
    merged = loads("supervisor: {tau: 2.0}\n", base=cfg)
    assert merged.supervisor.tau == 2.0 and merged.supervisor.d_min == cfg.supervisor.d_min
    assert loads("eval_epochs: null\n", base=cfg).eval_epochs is None


def test_yaml_errors_point_at_line():
    with pytest.raises(ConfigError, match=r"cfg.yaml:3:1: unknown key 'episdoes'"):
        loads("mode: idm\nseeds: [0]\nepisdoes: 3\n", source="cfg.yaml")
    with pytest.raises(ConfigError, match=r"cfg.yaml:2:9: epochs expects int"):
        loads("mode: idm\nepochs: many\n", source="cfg.yaml")
    with pytest.raises(ConfigError, match=r"cfg.yaml:1:1: mode"):
        loads("mode: teleport\n", source="cfg.yaml")
    with pytest.raises(ConfigError, match="road_closure"):
        loads("scenario: road_closure\n", source="cfg.yaml")


def test_config_validation():
    with pytest.raises(ConfigError):
        CampaignConfig(seeds=(1, 1))
    with pytest.raises(ConfigError):
        CampaignConfig(episodes=0)
    with pytest.raises(ConfigError):
        preset("huge")


def test_override_precedence(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("preset: acceptance\nepisodes: 7\nseeds: [4]\n")
    env = {"SAFELANE_SEED": "1,2", "SAFELANE_EPOCHS": "9"}
    cfg = resolve(str(p), None, {"epochs": 3}, environ=env)
    assert cfg.episodes == 7 and cfg.seeds == (1, 2) and cfg.epochs == 3
    assert cfg.densities == preset("acceptance").densities
    assert resolve(None, None, {}, environ={"SAFELANE_PRESET": "desk"}) == preset("desk")
    with pytest.raises(ConfigError):
        apply_overrides(CampaignConfig(), {"mode": "warp"})


# CLI ------------------------------------------------------------------------------------------

def test_cli_train_compare_plotdata(tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text("mode: idm\nroad: {length: 200}\ndensities: [0.25, 0.5]\nseeds: [0, 1]\nepochs: 4\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "summary_idm.csv").exists()
    assert len(read_csv(out / "summary_idm.csv")) == 4
    assert main(["compare", "--out", str(out), "--candidate", "idm", "--baseline", "idm"]) == 0
    report = json.loads((out / "compare_idm_vs_idm.json").read_text())
    assert [r["density"] for r in report["rows"]] == [0.25, 0.5]
    assert all(r["flow_delta"]["mean"] == 0 for r in report["rows"])
    assert main(["plotdata", "--out", str(out)]) == 0
    pd = load_plot_data(out / "plotdata.json")
    assert pd.flow_vs_density["idm"].density == [0.25, 0.5]
    assert {len(t.epoch) for t in pd.headway_vs_epoch} == {4}
    assert main(["eval", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "eval_idm.csv").exists()
    capsys.readouterr()


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("mode: idm\nepochz: 3\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.yaml:2:1" in capsys.readouterr().err
    assert main(["compare", "--out", str(tmp_path)]) == 2
    assert main(["plotdata", "--out", str(tmp_path / "empty")]) == 2
    with pytest.raises(SystemExit):
        main(["train", "--mode", "teleport"])


def test_result_table_csv_text_matches_file(tmp_path):
    table = run_campaign(tiny("idm", epochs=3), tmp_path)
    assert isinstance(table, ResultTable)
    assert (tmp_path / "summary_idm.csv").read_text() == table.csv_text()
