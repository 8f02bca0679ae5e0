# Experiment orchestration: benchmark schemes, grid-search oracle,
# EE-vs-backhaul sweeps, runtime benchmarks, and SE cross-validation.
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .alloc import Action, ZETA_BOUNDS, KAPPA_BOUNDS, NU_BOUNDS, realize
from .config import SystemConfig
from .env import CellFreeEnv, FeatureNormalizer, reward_from_report, \
    DEFAULT_EPISODE_LENGTH, DEFAULT_PENALTY
from .netgen import Scenario, generate_scenario
from .perf import PerfReport, closed_form_se, evaluate, mc_se_oracle, \
    REPORT_CSV_HEADER, report_csv_row
from .ppo import PpoHyper, PpoTrainer, SquashedGaussianPolicy, HIDDEN_SIZES, \
    init_mlp, load_checkpoint, save_checkpoint

SCHEMES = ("proposed", "drl_ao", "drl_ap")


def worker_count() -> int:
    """Concurrency cap from the CF_EE_THREADS environment variable."""
    try:
        return max(1, int(os.environ.get("CF_EE_THREADS", "1")))
    except ValueError:
        return 1


# --- scheme definitions ----------------------------------------------------

def scheme_bounds(scheme: str) -> Tuple[np.ndarray, np.ndarray]:
    """Action-box bounds of a scheme's (possibly reduced) action vector."""
    if scheme == "proposed":
        lo = [ZETA_BOUNDS[0], KAPPA_BOUNDS[0], NU_BOUNDS[0]]
        hi = [ZETA_BOUNDS[1], KAPPA_BOUNDS[1], NU_BOUNDS[1]]
    elif scheme == "drl_ao":   # only zeta is learned; kappa=0, nu=1 pinned
        lo, hi = [ZETA_BOUNDS[0]], [ZETA_BOUNDS[1]]
    elif scheme == "drl_ap":   # all APs stay on; kappa and nu are learned
        lo = [KAPPA_BOUNDS[0], NU_BOUNDS[0]]
        hi = [KAPPA_BOUNDS[1], NU_BOUNDS[1]]
    else:
        raise ValueError(f"unknown scheme '{scheme}'")
    return np.array(lo, dtype=float), np.array(hi, dtype=float)


def scheme_action(vec: np.ndarray, scheme: str) -> Action:
    """Expand a scheme's action vector into the full coefficient triple."""
    if scheme == "proposed":
        return Action(float(vec[0]), float(vec[1]), float(vec[2]))
    if scheme == "drl_ao":
        return Action(float(vec[0]), 0.0, 1.0)
    if scheme == "drl_ap":
        return Action(1.0, float(vec[0]), float(vec[1]))
    raise ValueError(f"unknown scheme '{scheme}'")


class SchemeEnv:
    """Adapter exposing CellFreeEnv through the trainer's flat interface."""

    def __init__(self, env: CellFreeEnv, scheme: str):
        self.env = env
        self.scheme = scheme
        self._state = None

    def reset(self, seed: int) -> np.ndarray:
        self._state = self.env.reset(seed)
        return self._state.beta_features

    def step(self, action_vec: np.ndarray):
        action = scheme_action(action_vec, self.scheme)
        self._state, reward, done = self.env.step(self._state, action)
        return self._state.beta_features, reward, done


# --- training and evaluation -------------------------------------------

def build_policy(scheme: str, obs_dim: int,
                 rng: np.random.Generator) -> SquashedGaussianPolicy:
    lo, hi = scheme_bounds(scheme)
    actor = init_mlp((obs_dim, *HIDDEN_SIZES, len(lo)), rng,
                     final_scale=0.01)
    return SquashedGaussianPolicy(actor, lo, hi)


def train_scheme(cfg: SystemConfig, scheme: str, hyper: PpoHyper,
                 master_seed: int, out_dir,
                 episode_length: int = DEFAULT_EPISODE_LENGTH,
                 feature_mode: str = "db_standardized",
                 total_steps: Optional[int] = None) -> Path:
    """Train one scheme; writes checkpoint + training log, returns the
    checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = CellFreeEnv(cfg, episode_length=episode_length,
                      penalty=hyper.penalty, feature_mode=feature_mode)
    rng = np.random.default_rng(master_seed)
    policy = build_policy(scheme, env.feature_dim, rng)
    critic = init_mlp((env.feature_dim, *HIDDEN_SIZES, 1), rng)
    trainer = PpoTrainer(
        SchemeEnv(env, scheme), policy, critic, hyper,
        master_seed=master_seed,
        to_coeffs=lambda v: scheme_action(v, scheme).as_array())
    trainer.train(total_steps=total_steps,
                  log_path=out_dir / f"train_{scheme}.csv")
    ckpt = out_dir / f"{scheme}.ckpt"
    meta = {
        "scheme": scheme,
        "M": cfg.M, "K": cfg.K, "N": cfg.N,
        "normalizer": env.normalizer.state_dict(),
        "feature_mode": feature_mode,
        "episode_length": episode_length,
        "master_seed": master_seed,
    }
    save_checkpoint(ckpt, policy, critic, hyper, meta)
    return ckpt


@dataclass
class LoadedPolicy:
    policy: SquashedGaussianPolicy
    scheme: str
    normalizer: Optional[FeatureNormalizer]
    feature_mode: str
    meta: dict


def load_policy(ckpt_path) -> LoadedPolicy:
    policy, _critic, _hyper, meta = load_checkpoint(ckpt_path)
    norm = None
    if meta.get("normalizer") is not None:
        norm = FeatureNormalizer.from_state_dict(meta["normalizer"])
    return LoadedPolicy(policy=policy, scheme=meta["scheme"],
                        normalizer=norm,
                        feature_mode=meta.get("feature_mode",
                                              "db_standardized"),
                        meta=meta)


def policy_features(sc: Scenario, loaded: LoadedPolicy) -> np.ndarray:
    flat = sc.beta.ravel()
    if loaded.feature_mode == "raw" or loaded.normalizer is None:
        return flat
    return loaded.normalizer.transform(10.0 * np.log10(flat))


def policy_action(sc: Scenario, loaded: LoadedPolicy) -> Action:
    """Deterministic (mean) action of a trained policy on one scenario."""
    vec = loaded.policy.deterministic_action(policy_features(sc, loaded))
    return scheme_action(vec, loaded.scheme)


def evaluate_policy(loaded: LoadedPolicy, scenarios: Sequence[Scenario],
                    cfg: SystemConfig) -> List[Tuple[Action, PerfReport]]:
    out = []
    for sc in scenarios:
        action = policy_action(sc, loaded)
        dec = realize(action, sc, cfg)
        out.append((action, evaluate(sc, dec, cfg)))
    return out


def held_out_scenarios(cfg: SystemConfig, n: int,
                       seed: int) -> List[Scenario]:
    """Evaluation scenarios drawn from a seed stream distinct from
    training episode seeds (which are < 2**62)."""
    base = 2 ** 62 + seed * 1_000_003
    return [generate_scenario(cfg, base + i) for i in range(n)]


# --- grid-search oracle ------------------------------------------------

def parse_grid(spec: str) -> Dict[str, np.ndarray]:
    """Parse 'z=0.05:1:20,k=0:4:17,n=0:4:17' into coordinate grids."""
    names = {"z": "zeta", "k": "kappa", "n": "nu"}
    grid: Dict[str, np.ndarray] = {}
    for part in spec.split(","):
        key, rng_spec = part.split("=")
        lo, hi, count = rng_spec.split(":")
        grid[names[key.strip()]] = np.linspace(float(lo), float(hi),
                                               int(count))
    missing = set(names.values()) - set(grid)
    if missing:
        raise ValueError(f"grid missing coordinates: {sorted(missing)}")
    return grid


def default_grid(n_zeta: int = 20, n_kappa: int = 17,
                 n_nu: int = 17) -> Dict[str, np.ndarray]:
    return {
        "zeta": np.linspace(ZETA_BOUNDS[0], ZETA_BOUNDS[1], n_zeta),
        "kappa": np.linspace(KAPPA_BOUNDS[0], KAPPA_BOUNDS[1], n_kappa),
        "nu": np.linspace(NU_BOUNDS[0], NU_BOUNDS[1], n_nu),
    }


@dataclass
class OracleResult:
    action: Action
    reward: float
    ee_mbits_per_joule: float
    report: PerfReport


def grid_oracle_one(sc: Scenario, grid: Dict[str, np.ndarray],
                    cfg: SystemConfig,
                    penalty: float = DEFAULT_PENALTY) -> OracleResult:
    """Exhaustive search over the coefficient grid for one scenario.

    Ties break toward the lexicographically smallest (zeta, kappa, nu);
    iteration order makes the first maximum the lexicographic winner.
    """
    from .alloc import ap_scores, select_aps, allocate_antennas, \
        allocate_power
    from .perf import AllocationDecision
    best: Optional[OracleResult] = None
    scores = ap_scores(sc.beta)
    for zeta in grid["zeta"]:
        active = select_aps(scores, float(zeta))
        for kappa in grid["kappa"]:
            n_active = allocate_antennas(scores, active, float(kappa), cfg.N)
            for nu in grid["nu"]:
                eta = allocate_power(sc.gamma, n_active, active, float(nu))
                dec = AllocationDecision(active=active, n_active=n_active,
                                         eta=eta)
                report = evaluate(sc, dec, cfg)
                reward = reward_from_report(report, penalty)
                if best is None or reward > best.reward:
                    best = OracleResult(
                        action=Action(float(zeta), float(kappa), float(nu)),
                        reward=reward,
                        ee_mbits_per_joule=report.ee_mbits_per_joule,
                        report=report)
    return best


def _oracle_task(args):
    sc, grid, cfg, penalty = args
    return grid_oracle_one(sc, grid, cfg, penalty)


def grid_oracle(scenarios: Sequence[Scenario], grid: Dict[str, np.ndarray],
                cfg: SystemConfig,
                penalty: float = DEFAULT_PENALTY) -> List[OracleResult]:
    """Per-scenario grid argmax; results ordered like the input list."""
    workers = worker_count()
    if workers == 1 or len(scenarios) < 2:
        return [grid_oracle_one(sc, grid, cfg, penalty) for sc in scenarios]
    tasks = [(sc, grid, cfg, penalty) for sc in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_oracle_task, tasks))


# --- figure-analogue experiments ----------------------------------------

def sweep_pbt(checkpoints: Dict[str, Path], pbt_values: Sequence[float],
              cfg: SystemConfig, n_scenarios: int = 100,
              seed: int = 0) -> List[dict]:
    """Mean held-out EE per scheme as the backhaul traffic power varies."""
    loaded = {name: load_policy(p) for name, p in checkpoints.items()}
    rows = []
    for pbt in pbt_values:
        cfg_p = SystemConfig(**{**_cfg_dict(cfg),
                                "p_bt_watts_per_gbps": float(pbt)})
        scenarios = held_out_scenarios(cfg_p, n_scenarios, seed)
        for name, lp in loaded.items():
            results = evaluate_policy(lp, scenarios, cfg_p)
            ees = np.array([r.ee_mbits_per_joule for _, r in results])
            rows.append({
                "p_bt": float(pbt), "scheme": name,
                "mean_ee_mbits_per_joule": float(ees.mean()),
                "stderr_ee": float(ees.std(ddof=1) / np.sqrt(len(ees))),
                "n_scenarios": len(ees),
            })
    return rows


def _cfg_dict(cfg: SystemConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(SystemConfig)}


def bench_runtime(m_values: Sequence[int], cfg: SystemConfig,
                  checkpoint: Optional[Path] = None, n_calls: int = 1000,
                  oracle_grid: Optional[Dict[str, np.ndarray]] = None,
                  seed: int = 0) -> List[dict]:
    """Per-decision latency of policy inference + realization vs the grid
    oracle, across network sizes. Without a checkpoint, a freshly
    initialized policy of the right dimensions is timed (zero-shot)."""
    rows = []
    oracle_grid = oracle_grid or default_grid(10, 10, 10)
    for M in m_values:
        cfg_m = SystemConfig(**{**_cfg_dict(cfg), "M": int(M)})
        sc = generate_scenario(cfg_m, seed + M)
        if checkpoint is not None:
            lp = load_policy(checkpoint)
            if lp.policy.actor.sizes[0] != cfg_m.M * cfg_m.K:
                raise ValueError("checkpoint dimensions do not match M*K")
        else:
            rng = np.random.default_rng(seed)
            lp = LoadedPolicy(
                policy=build_policy("proposed", cfg_m.M * cfg_m.K, rng),
                scheme="proposed", normalizer=None, feature_mode="raw",
                meta={})
        feats = policy_features(sc, lp)

        lat = np.empty(n_calls)
        for i in range(n_calls):
            t0 = time.perf_counter()
            vec = lp.policy.deterministic_action(feats)
            realize(scheme_action(vec, lp.scheme), sc, cfg_m)
            lat[i] = time.perf_counter() - t0

        n_oracle = max(3, n_calls // 100)
        olat = np.empty(n_oracle)
        for i in range(n_oracle):
            t0 = time.perf_counter()
            grid_oracle_one(sc, oracle_grid, cfg_m)
            olat[i] = time.perf_counter() - t0

        rows.append({
            "M": int(M),
            "policy_median_ms": float(np.median(lat) * 1e3),
            "policy_p95_ms": float(np.percentile(lat, 95) * 1e3),
            "oracle_median_ms": float(np.median(olat) * 1e3),
            "speedup": float(np.median(olat) / np.median(lat)),
        })
    return rows


def latency_growth_exponent(rows: List[dict]) -> float:
    """Log-log slope of median policy latency versus M."""
    m = np.log([r["M"] for r in rows])
    t = np.log([r["policy_median_ms"] for r in rows])
    slope = np.polyfit(m, t, 1)[0]
    return float(slope)


# --- closed-form vs Monte Carlo validation -------------------------------

@dataclass
class SeValidationCase:
    seed: int
    M: int
    K: int
    N: int
    tau_p: int
    max_rel_err: float
    ok: bool


def random_small_case(seed: int, max_rel: float = 0.03,
                      n_realizations: int = 100_000,
                      force_shared_pilot: bool = False) -> SeValidationCase:
    """One random small instance: closed form vs the MC oracle."""
    from .perf import AllocationDecision
    rng = np.random.default_rng(seed)
    while True:
        M = int(rng.integers(1, 5))
        K = int(rng.integers(1, 4))
        N = int(rng.integers(1, 5))
        if M * N > K:
            break
    if force_shared_pilot:
        K = max(K, 2)
        tau_p = 1
        if M * N <= K:
            M, N = 2, 2
    else:
        tau_p = int(rng.integers(1, K + 1))
    cfg = SystemConfig(M=M, K=K, N=N, tau_p=tau_p,
                       tau_c=max(200, tau_p + 1))
    sc = generate_scenario(cfg, int(rng.integers(2 ** 31)))

    # random feasible decision: random active set, antenna counts, and
    # row powers at a random fraction of the per-AP budget
    n_on = int(rng.integers(1, M + 1))
    active = np.sort(rng.choice(M, size=n_on, replace=False))
    n_active = np.zeros(M, dtype=int)
    n_active[active] = rng.integers(1, N + 1, size=n_on)
    eta = np.zeros((M, K))
    for m in active:
        raw = rng.uniform(0.1, 1.0, size=K)
        budget_frac = rng.uniform(0.3, 1.0)
        eta[m] = raw / (raw * sc.gamma[m]).sum() \
            * budget_frac / n_active[m]
    dec = AllocationDecision(active=active, n_active=n_active, eta=eta)
    dec.validate(sc.gamma, cfg.N)

    se_cf = closed_form_se(sc, dec, cfg)
    se_mc = mc_se_oracle(sc, dec, cfg, n_realizations,
                         seed=int(rng.integers(2 ** 31)))
    denom = np.maximum(se_cf, 1e-12)
    rel = float(np.max(np.abs(se_cf - se_mc) / denom))
    return SeValidationCase(seed=seed, M=M, K=K, N=N, tau_p=tau_p,
                            max_rel_err=rel, ok=rel <= max_rel)


def validate_se(n_cases: int = 20, n_realizations: int = 100_000,
                seed: int = 0, max_rel: float = 0.03) -> List[SeValidationCase]:
    """Cross-validate the closed form against the MC oracle on random
    small instances (includes shared-pilot cases)."""
    cases = []
    for i in range(n_cases):
        cases.append(random_small_case(
            seed + i, max_rel=max_rel, n_realizations=n_realizations,
            force_shared_pilot=(i % 5 == 4)))
    return cases


# --- configuration files ------------------------------------------------

def load_config(path) -> dict:
    """Load the YAML experiment configuration; see configs/default.yaml
    for the schema. Returns a dict with 'system', 'env', 'ppo' objects."""
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    sys_block = raw.get("system", {}) or {}
    cfg = SystemConfig(**sys_block)
    env_block = raw.get("env", {}) or {}
    ppo_block = raw.get("ppo", {}) or {}
    hyper = PpoHyper(**ppo_block)
    hyper.penalty = env_block.get("penalty_coefficient", hyper.penalty)
    cfg.idle_backhaul_power = env_block.get("idle_backhaul_power",
                                            cfg.idle_backhaul_power)
    return {
        "system": cfg,
        "episode_length": env_block.get("episode_length",
                                        DEFAULT_EPISODE_LENGTH),
        "feature_mode": env_block.get("feature_mode", "db_standardized"),
        "ppo": hyper,
        "master_seed": raw.get("master_seed", 0),
        "raw": raw,
    }
