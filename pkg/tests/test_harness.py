import numpy as np
import pytest

from cfee.cli import main
from cfee.config import SystemConfig
from cfee.harness import (SchemeEnv, bench_runtime, default_grid,
                          evaluate_policy, grid_oracle, grid_oracle_one,
                          held_out_scenarios, latency_growth_exponent,
                          load_config, load_policy, parse_grid, policy_action,
                          scheme_action, scheme_bounds, sweep_pbt,
                          train_scheme, validate_se)
from cfee.alloc import realize
from cfee.env import CellFreeEnv, reward_from_report
from cfee.netgen import Scenario, generate_scenario
from cfee.perf import evaluate
from cfee.ppo import PpoHyper


@pytest.fixture
def cfg():
    return SystemConfig(M=5, K=3, N=4, tau_p=3)


def small_hyper(**kw):
    base = dict(rollout_horizon=64, epochs_per_update=2, minibatch=32)
    base.update(kw)
    return PpoHyper(**base)


class TestSchemes:
    def test_bounds_shapes(self):
        assert scheme_bounds("proposed")[0].shape == (3,)
        assert scheme_bounds("drl_ao")[0].shape == (1,)
        assert scheme_bounds("drl_ap")[0].shape == (2,)
        with pytest.raises(ValueError):
            scheme_bounds("nope")

    def test_drl_ao_pins_kappa_nu(self):
        a = scheme_action(np.array([0.4]), "drl_ao")
        assert (a.zeta, a.kappa, a.nu) == (0.4, 0.0, 1.0)

    def test_drl_ap_keeps_all_aps(self, cfg):
        sc = generate_scenario(cfg, 0)
        a = scheme_action(np.array([2.0, 0.5]), "drl_ap")
        assert a.zeta == 1.0
        dec = realize(a, sc, cfg)
        assert len(dec.active) == cfg.M

    def test_drl_ao_uniform_antennas(self, cfg):
        sc = generate_scenario(cfg, 1)
        dec = realize(scheme_action(np.array([0.6]), "drl_ao"), sc, cfg)
        assert np.all(dec.n_active[dec.active] == cfg.N)

    def test_scheme_env_round_trip(self, cfg):
        env = SchemeEnv(CellFreeEnv(cfg, episode_length=2), "drl_ao")
        obs = env.reset(5)
        assert obs.shape == (cfg.M * cfg.K,)
        obs2, reward, done = env.step(np.array([0.5]))
        assert np.isfinite(reward) and not done
        _, _, done = env.step(np.array([0.5]))
        assert done


class TestGridParsing:
    def test_parse_round_trip(self):
        grid = parse_grid("z=0.05:1:20,k=0:4:17,n=0:4:17")
        assert len(grid["zeta"]) == 20
        assert grid["zeta"][0] == 0.05
        assert grid["kappa"][-1] == 4.0
        assert len(grid["nu"]) == 17

    def test_missing_axis_rejected(self):
        with pytest.raises(ValueError):
            parse_grid("z=0:1:5")

    def test_default_grid_covers_bounds(self):
        grid = default_grid()
        assert grid["zeta"][0] == 0.05 and grid["zeta"][-1] == 1.0
        assert grid["kappa"][0] == 0.0 and grid["kappa"][-1] == 4.0


class TestGridOracle:
    def test_single_point_grid_matches_direct_eval(self, cfg):
        sc = generate_scenario(cfg, 3)
        grid = {"zeta": np.array([0.7]), "kappa": np.array([1.0]),
                "nu": np.array([0.5])}
        res = grid_oracle_one(sc, grid, cfg)
        assert (res.action.zeta, res.action.kappa, res.action.nu) == \
            (0.7, 1.0, 0.5)
        rep = evaluate(sc, realize(res.action, sc, cfg), cfg)
        assert res.reward == pytest.approx(reward_from_report(rep, 20.0))
        assert res.ee_mbits_per_joule == pytest.approx(
            rep.ee_mbits_per_joule)

    def test_oracle_dominates_grid_points(self, cfg):
        sc = generate_scenario(cfg, 4)
        grid = default_grid(5, 4, 4)
        res = grid_oracle_one(sc, grid, cfg)
        rng = np.random.default_rng(0)
        for _ in range(10):
            from cfee.alloc import Action
            a = Action(float(rng.choice(grid["zeta"])),
                       float(rng.choice(grid["kappa"])),
                       float(rng.choice(grid["nu"])))
            rep = evaluate(sc, realize(a, sc, cfg), cfg)
            assert reward_from_report(rep, 20.0) <= res.reward + 1e-12

    def test_results_ordered_like_input(self, cfg):
        scen = held_out_scenarios(cfg, 3, seed=1)
        grid = default_grid(4, 3, 3)
        batch = grid_oracle(scen, grid, cfg)
        singles = [grid_oracle_one(sc, grid, cfg) for sc in scen]
        for b, s in zip(batch, singles):
            assert b.reward == s.reward
            assert b.action == s.action

    def test_parallel_matches_serial(self, cfg, monkeypatch):
        scen = held_out_scenarios(cfg, 4, seed=2)
        grid = default_grid(4, 3, 3)
        serial = grid_oracle(scen, grid, cfg)
        monkeypatch.setenv("CF_EE_THREADS", "2")
        parallel = grid_oracle(scen, grid, cfg)
        for a, b in zip(serial, parallel):
            assert a.reward == b.reward
            assert a.action == b.action


class TestTrainEval:
    def test_train_writes_checkpoint_and_log(self, cfg, tmp_path):
        ckpt = train_scheme(cfg, "drl_ao", small_hyper(), master_seed=0,
                            out_dir=tmp_path, episode_length=16,
                            total_steps=128)
        assert ckpt.exists()
        log = tmp_path / "train_drl_ao.csv"
        lines = log.read_text().strip().splitlines()
        assert lines[0].startswith("step,mean_reward")
        assert len(lines) == 3  # header + 2 updates of 64 steps

    def test_loaded_policy_evaluates(self, cfg, tmp_path):
        ckpt = train_scheme(cfg, "proposed", small_hyper(), master_seed=1,
                            out_dir=tmp_path, episode_length=16,
                            total_steps=64)
        lp = load_policy(ckpt)
        assert lp.scheme == "proposed"
        assert lp.normalizer is not None
        scen = held_out_scenarios(cfg, 3, seed=0)
        results = evaluate_policy(lp, scen, cfg)
        assert len(results) == 3
        for action, report in results:
            assert action.in_bounds()
            assert np.isfinite(report.ee_mbits_per_joule)

    def test_policy_action_deterministic(self, cfg, tmp_path):
        ckpt = train_scheme(cfg, "drl_ap", small_hyper(), master_seed=2,
                            out_dir=tmp_path, episode_length=16,
                            total_steps=64)
        lp = load_policy(ckpt)
        sc = generate_scenario(cfg, 9)
        assert policy_action(sc, lp) == policy_action(sc, lp)

    def test_held_out_disjoint_from_training_seeds(self, cfg):
        scen = held_out_scenarios(cfg, 5, seed=0)
        assert all(sc.seed >= 2 ** 62 for sc in scen)
        assert len({sc.seed for sc in scen}) == 5


class TestDominantApGeometry:
    def test_oracle_shuts_down_remote_aps(self):
        # one AP next to every user, the rest far away: small zeta wins
        cfg = SystemConfig(M=4, K=2, N=4, tau_p=2, shadow_sigma_db=0.0)
        cfg.ap_positions_override = np.array(
            [[500.0, 500.0], [10.0, 10.0], [990.0, 10.0], [10.0, 990.0]])
        cfg.user_positions_override = np.array(
            [[495.0, 500.0], [505.0, 500.0]])
        sc = generate_scenario(cfg, 0)
        grid = default_grid(8, 3, 3)
        res = grid_oracle_one(sc, grid, cfg)
        dec = realize(res.action, sc, cfg)
        assert len(dec.active) == 1
        assert dec.active[0] == 0


class TestSweepPbt:
    def test_ee_decreases_with_backhaul_price(self, cfg, tmp_path):
        ckpt = train_scheme(cfg, "drl_ao", small_hyper(), master_seed=3,
                            out_dir=tmp_path, episode_length=16,
                            total_steps=64)
        rows = sweep_pbt({"drl_ao": ckpt}, [0.0, 0.25, 1.0], cfg,
                         n_scenarios=5, seed=0)
        assert len(rows) == 3
        ees = [r["mean_ee_mbits_per_joule"] for r in rows]
        assert ees[0] > ees[1] > ees[2]
        assert all(r["stderr_ee"] >= 0 for r in rows)


class TestBench:
    def test_latency_rows_and_speedup(self, cfg):
        rows = bench_runtime([5, 10], cfg, checkpoint=None, n_calls=30)
        assert [r["M"] for r in rows] == [5, 10]
        for r in rows:
            assert r["policy_median_ms"] > 0
            assert r["speedup"] > 1
        assert np.isfinite(latency_growth_exponent(rows))


class TestValidateSe:
    def test_small_batch_passes(self):
        cases = validate_se(n_cases=3, n_realizations=20_000, seed=0,
                            max_rel=0.05)
        assert all(c.ok for c in cases)

    def test_shared_pilot_case_forced(self):
        from cfee.harness import random_small_case
        c = random_small_case(4, n_realizations=20_000, max_rel=0.05,
                              force_shared_pilot=True)
        assert c.tau_p == 1 and c.K >= 2
        assert c.ok


class TestLoadConfig:
    def test_yaml_round_trip(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(
            "system: {M: 6, K: 3, N: 4, tau_p: 3}\n"
            "env: {episode_length: 32, penalty_coefficient: 10.0}\n"
            "ppo: {rollout_horizon: 128, lr_actor: 0.001}\n"
            "master_seed: 5\n")
        conf = load_config(p)
        assert conf["system"].M == 6
        assert conf["episode_length"] == 32
        assert conf["ppo"].rollout_horizon == 128
        assert conf["ppo"].penalty == 10.0
        assert conf["master_seed"] == 5

    def test_default_config_file_parses(self):
        conf = load_config("configs/default.yaml")
        assert conf["system"].M == 40

    def test_bad_field_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("system: {M: -3}\n")
        with pytest.raises(ValueError):
            load_config(p)


class TestCli:
    def test_gen_eval_round_trip(self, cfg, tmp_path):
        conf = tmp_path / "c.yaml"
        conf.write_text("system: {M: 5, K: 3, N: 4, tau_p: 3}\n"
                        "ppo: {rollout_horizon: 64, epochs_per_update: 2,"
                        " minibatch: 32}\n")
        scen_dir = tmp_path / "scen"
        for seed in (1, 2):
            rc = main(["gen", "--config", str(conf), "--seed", str(seed),
                       "--out", str(scen_dir / f"s{seed}")])
            assert rc == 0
        rc = main(["train", "--config", str(conf), "--scheme", "drl_ao",
                   "--out", str(tmp_path / "run"), "--steps", "64"])
        assert rc == 0
        out = tmp_path / "eval.csv"
        rc = main(["eval", "--checkpoint",
                   str(tmp_path / "run" / "drl_ao.ckpt"),
                   "--scenarios", str(scen_dir), "--config", str(conf),
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 3

    def test_oracle_csv_deterministic(self, tmp_path):
        conf = tmp_path / "c.yaml"
        conf.write_text("system: {M: 4, K: 2, N: 3, tau_p: 2}\n")
        outs = []
        for name in ("a.csv", "b.csv"):
            rc = main(["oracle", "--config", str(conf), "--scenarios", "3",
                       "--grid", "z=0.05:1:4,k=0:4:3,n=0:4:3",
                       "--seed", "0", "--out", str(tmp_path / name)])
            assert rc == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_gen_csv_deterministic(self, tmp_path):
        blobs = []
        for name in ("g1", "g2"):
            rc = main(["gen", "--seed", "7", "--out", str(tmp_path / name)])
            assert rc == 0
            blobs.append((tmp_path / name / "beta.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_validate_se_subcommand(self, capsys):
        rc = main(["validate-se", "--cases", "2",
                   "--realizations", "100000"])
        assert rc == 0
        assert "validation passed" in capsys.readouterr().out

    def test_missing_checkpoint_is_error_exit(self, tmp_path):
        rc = main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                   "--scenarios", str(tmp_path)])
        assert rc in (1, 2)
