import json
import os

import numpy as np
import pytest

from maxseek.harness import (
    ExperimentConfig,
    PlanningView,
    _quartiles,
    export_plot_data,
    format_summary,
    gaussian_kde,
    load_record,
    load_results,
    record_from_dict,
    record_to_dict,
    replay_belief,
    run_batch,
    run_trial,
    save_record,
    save_results,
    score_trial,
)
from maxseek.planner import plan_boustrophedon
from maxseek.world import rect_distance


def small_config(**kw):
    base = dict(
        trials=1,
        budget=9.0,
        rollouts=40,
        horizon=3,
        spectral_features=128,
        argmax_restarts=4,
        grid_resolution=50,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_json_round_trip(self):
        cfg = small_config(baselines=("boustro",))
        again = ExperimentConfig.from_json(cfg.to_json())
        assert again == cfg
        assert again.hash() == cfg.hash()

    def test_unknown_keys_rejected(self):
        payload = json.loads(small_config().to_json())
        payload["rollout_budget"] = 10
        with pytest.raises(ValueError, match="rollout_budget"):
            ExperimentConfig.from_json(json.dumps(payload))

    def test_validation(self):
        with pytest.raises(ValueError):
            small_config(scenario="weird").validate()
        with pytest.raises(ValueError):
            small_config(planner="astar").validate()
        with pytest.raises(ValueError):
            small_config(noise_variance=0.0).validate()
        with pytest.raises(ValueError):
            small_config(rollouts=3).validate()   # below primitive count
        with pytest.raises(ValueError):
            small_config(scenario="grid-file").validate()

    def test_from_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(small_config().to_json())
        assert ExperimentConfig.from_file(str(p)) == small_config()


class TestRunTrial:
    def test_degenerate_budget_logs_only_setup(self):
        cfg = small_config(budget=1.0)   # below one primitive length
        rec = run_trial(cfg, 0, "plumes")
        assert len(rec.entries) == 1
        assert rec.entries[0].action_id == -1
        assert rec.entries[0].cumulative_length == 0.0

    def test_budget_accounting_and_entry_bound(self):
        cfg = small_config(budget=9.0)
        rec = run_trial(cfg, 0, "ucb-myopic")
        lengths = [e.cumulative_length for e in rec.entries]
        assert all(b >= a for a, b in zip(lengths, lengths[1:]))
        assert lengths[-1] <= cfg.budget
        # one more primitive would overshoot (vehicle was not trapped)
        assert rec.status == "completed"
        assert lengths[-1] + cfg.action_length > cfg.budget
        assert len(rec.entries) <= cfg.budget / cfg.action_length + 1

    def test_deterministic_repeat(self):
        cfg = small_config(budget=6.0, rollouts=25)
        a = record_to_dict(run_trial(cfg, 0, "plumes"))
        b = record_to_dict(run_trial(cfg, 0, "plumes"))
        for d in (a, b):   # wall-clock timing is the one physical field
            for e in d["entries"]:
                e.pop("wall_time")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_boustro_walks_planned_waypoints(self):
        cfg = small_config(budget=30.0, planner="boustro")
        rec = run_trial(cfg, 0)
        w = plan_boustrophedon(cfg.geofence, cfg.row_spacing, cfg.sample_spacing)
        observed = np.vstack([e.locations for e in rec.entries])
        # setup stay at the first waypoint, then the waypoint list in order
        assert np.allclose(observed[0], w[0])
        n = observed.shape[0] - 1
        assert np.allclose(observed[1:], w[1 : n + 1])
        # truncated at the distance budget
        assert rec.entries[-1].cumulative_length <= cfg.budget

    def test_trajectory_respects_geofence_and_known_obstacles(self):
        cfg = small_config(scenario="non-convex-known", budget=15.0, base_seed=3)
        rec = run_trial(cfg, 0, "ucb-myopic")
        x0, y0, x1, y1 = cfg.geofence
        pts = rec.sample_locations()
        assert np.all((pts[:, 0] >= x0) & (pts[:, 0] <= x1))
        assert np.all((pts[:, 1] >= y0) & (pts[:, 1] <= y1))

    def test_revealed_dubins_mission_completes(self):
        cfg = small_config(
            scenario="non-convex-revealed", budget=9.0, action_count=7,
            rollouts=30, base_seed=5,
        )
        rec = run_trial(cfg, 0, "plumes")
        assert rec.status in ("completed", "trapped")
        assert len(rec.entries) <= cfg.budget / cfg.action_length + 1

    def test_spatiotemporal_mission_runs(self):
        cfg = small_config(scenario="spatiotemporal", budget=6.0,
                           grid_resolution=15, rollouts=20, horizon=2)
        rec = run_trial(cfg, 0, "plumes")
        assert rec.notes["dynamic"] is True
        assert rec.final_time >= 1.0
        assert rec.entries[1].times[0] == 1.0

    def test_metrics_from_record(self):
        cfg = small_config(budget=9.0)
        rec = run_trial(cfg, 0, "plumes")
        rep = score_trial(rec, cfg.epsilon)
        assert rep.mss_reward >= 0
        assert np.isfinite(rep.rmse)


class TestRunBatch:
    def test_single_trial_aggregate(self):
        cfg = small_config(budget=6.0, rollouts=25)
        batch = run_batch(cfg)
        entry = batch.aggregate["planners"]["plumes"]
        assert entry["trials"] == 1
        assert entry["mss_reward"][1] == 0.0   # IQR of one value

    def test_quartiles_linear_interpolation(self):
        med, iqr = _quartiles([1.0, 2.0, 3.0, 4.0])
        assert med == 2.5
        assert iqr == pytest.approx(1.5)

    def test_baselines_share_environments(self):
        cfg = small_config(budget=6.0, rollouts=25, baselines=("ucb-myopic",))
        batch = run_batch(cfg, keep_records=True)
        a = batch.records[("plumes", 0)]
        b = batch.records[("ucb-myopic", 0)]
        assert np.array_equal(a.truth, b.truth)
        assert np.array_equal(a.xstar, b.xstar)
        u, p = batch.aggregate["planners"]["ucb-myopic"]["mwu_vs_primary"]
        assert 0.0 <= p <= 1.0

    def test_different_seeds_same_schema(self):
        cfg1 = small_config(budget=6.0, rollouts=25)
        cfg2 = small_config(budget=6.0, rollouts=25, base_seed=9)
        b1 = run_batch(cfg1)
        b2 = run_batch(cfg2)
        assert set(b1.aggregate["planners"]) == set(b2.aggregate["planners"])
        assert b1.trials[0].metrics != b2.trials[0].metrics

    def test_worker_pool_matches_serial(self):
        cfg = small_config(budget=6.0, rollouts=25, trials=2, baselines=("boustro",))
        serial = run_batch(cfg)
        cfg2 = small_config(budget=6.0, rollouts=25, trials=2, baselines=("boustro",),
                            workers=2)
        parallel = run_batch(cfg2)
        for a, b in zip(serial.trials, parallel.trials):
            assert a.metrics == b.metrics

    def test_results_file_round_trip(self, tmp_path):
        cfg = small_config(budget=6.0, rollouts=25, baselines=("boustro",))
        out = str(tmp_path / "run")
        run_batch(cfg, out_dir=out)
        path = os.path.join(out, "results.jsonl")
        first = open(path, "rb").read()
        save_results(load_results(path), path)
        assert open(path, "rb").read() == first
        assert os.path.exists(os.path.join(out, "summary.txt"))
        assert os.path.exists(os.path.join(out, "trial_plumes_000.json"))


class TestPersistence:
    def test_record_round_trip(self, tmp_path):
        cfg = small_config(budget=6.0, rollouts=25)
        rec = run_trial(cfg, 0, "plumes")
        path = str(tmp_path / "trial.json")
        save_record(rec, path)
        again = load_record(path)
        assert record_to_dict(again) == record_to_dict(rec)

    def test_replay_matches_stored_snapshot(self):
        cfg = small_config(budget=6.0, rollouts=25)
        rec = run_trial(cfg, 0, "ucb-myopic")
        belief = replay_belief(rec)
        pts = rec.grid_points()
        mean, var = belief.posterior(pts)
        assert np.allclose(mean.reshape(rec.posterior_mean.shape),
                           rec.posterior_mean, atol=1e-8)


class TestExport:
    def make_record(self, planner="plumes"):
        cfg = small_config(budget=6.0, rollouts=25)
        return cfg, run_trial(cfg, 0, planner)

    def test_belief_heatmap_rows(self, tmp_path):
        cfg, rec = self.make_record()
        (path,) = export_plot_data(rec, "belief-heatmap", str(tmp_path))
        rows = open(path).read().strip().splitlines()
        assert rows[0] == "x,y,value"
        assert len(rows) - 1 == rec.grid_xs.size * rec.grid_ys.size

    def test_reward_heatmap_at_step(self, tmp_path):
        cfg, rec = self.make_record()
        (path,) = export_plot_data(rec, "reward-heatmap", str(tmp_path), step=2)
        rows = open(path).read().strip().splitlines()
        vals = np.array([float(r.split(",")[2]) for r in rows[1:]])
        assert np.all(vals >= 0.0)   # MVI reward is non-negative

    def test_trajectory_length(self, tmp_path):
        cfg, rec = self.make_record("ucb-myopic")
        (path,) = export_plot_data(rec, "trajectory", str(tmp_path))
        rows = open(path).read().strip().splitlines()
        assert len(rows) - 1 == len(rec.entries)

    def test_reward_density_integrates_to_one(self, tmp_path):
        cfg = small_config(budget=6.0, rollouts=25, trials=3)
        batch = run_batch(cfg)
        (path,) = export_plot_data(batch, "reward-density", str(tmp_path))
        rows = open(path).read().strip().splitlines()[1:]
        xs = np.array([float(r.split(",")[0]) for r in rows])
        ds = np.array([float(r.split(",")[1]) for r in rows])
        assert abs(np.trapezoid(ds, xs) - 1.0) < 0.02

    def test_delta_kde_single_peak(self):
        xs, dens = gaussian_kde(np.full(7, 3.25))
        assert abs(np.trapezoid(dens, xs) - 1.0) < 0.02
        assert xs[np.argmax(dens)] == pytest.approx(3.25, abs=1e-6)

    def test_unknown_kind_rejected(self, tmp_path):
        cfg, rec = self.make_record()
        with pytest.raises(ValueError):
            export_plot_data(rec, "volume-render", str(tmp_path))


class TestCli:
    def test_run_and_compare(self, tmp_path, capsys):
        from maxseek.cli import main

        cfg = small_config(budget=6.0, rollouts=25, trials=2)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(cfg.to_json())
        out_a = str(tmp_path / "a")
        assert main(["run", "--config", str(cfg_path), "--out", out_a]) == 0
        out_b = str(tmp_path / "b")
        assert main(["run", "--config", str(cfg_path), "--seed", "7",
                     "--out", out_b]) == 0
        assert main(["compare", "--a", os.path.join(out_a, "results.jsonl"),
                     "--b", os.path.join(out_b, "results.jsonl")]) == 0
        text = capsys.readouterr().out
        assert "Mann-Whitney" in text

    def test_export_cli(self, tmp_path, capsys):
        from maxseek.cli import main

        cfg = small_config(budget=6.0, rollouts=25)
        out = str(tmp_path / "run")
        run_batch(cfg, out_dir=out)
        rec_path = os.path.join(out, "trial_plumes_000.json")
        assert main(["export", "--record", rec_path, "--what", "trajectory",
                     "--out", str(tmp_path)]) == 0

    def test_env_var_overrides_out(self, tmp_path, monkeypatch, capsys):
        from maxseek.cli import main

        cfg = small_config(budget=6.0, rollouts=25)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(cfg.to_json())
        override = str(tmp_path / "forced")
        monkeypatch.setenv("MAXSEEK_OUT", override)
        assert main(["run", "--config", str(cfg_path), "--out",
                     str(tmp_path / "ignored")]) == 0
        assert os.path.exists(os.path.join(override, "results.jsonl"))
