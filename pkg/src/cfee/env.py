# Episodic environment: states are large-scale fading snapshots, actions
# are the three allocation coefficients, rewards trade EE against QoS.
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .alloc import Action, realize
from .config import SystemConfig
from .netgen import Scenario, scenario_from_rng
from .perf import PerfReport, evaluate

log = logging.getLogger(__name__)

DEFAULT_EPISODE_LENGTH = 200
DEFAULT_PENALTY = 20.0       # xi_pen, commensurate with EE in Mbit/J
NORMALIZER_WARMUP_SLOTS = 1000


@dataclass
class EnvState:
    beta_features: np.ndarray  # (M*K,) observation fed to the policy
    slot_index: int            # t in {1..T}
    scenario: Scenario


@dataclass
class Transition:
    state: np.ndarray          # features
    action_raw: np.ndarray     # pre-squash gaussian sample
    action: np.ndarray         # squashed coefficients, policy's native dim
    log_prob: float
    reward: float
    value: float
    done: bool
    next_state: np.ndarray


class FeatureNormalizer:
    """Per-feature running standardization, frozen after a warmup budget.

    Statistics accumulate over the first `warmup` observed slots (Welford),
    then stay fixed so that the policy sees a stationary feature map.
    """

    def __init__(self, dim: int, warmup: int = NORMALIZER_WARMUP_SLOTS):
        self.dim = dim
        self.warmup = warmup
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @property
    def frozen(self) -> bool:
        return self.count >= self.warmup

    def update(self, x: np.ndarray):
        if self.frozen:
            return
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.sqrt(np.maximum(self.m2 / (self.count - 1), 1e-8))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std()

    def state_dict(self) -> dict:
        return {"count": self.count, "warmup": self.warmup,
                "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_state_dict(cls, d: dict) -> "FeatureNormalizer":
        norm = cls(len(d["mean"]), warmup=d["warmup"])
        norm.count = d["count"]
        norm.mean = np.array(d["mean"])
        norm.m2 = np.array(d["m2"])
        return norm


def reward_from_report(report: PerfReport, penalty: float) -> float:
    """EE in Mbit/J minus the weighted QoS shortfall."""
    return report.ee_mbits_per_joule - penalty * float(
        report.qos_shortfall.sum())


class CellFreeEnv:
    """MDP over successive large-scale intervals of one network.

    AP positions are fixed per episode; user placement and shadowing are
    redrawn i.i.d. each slot from the episode's RNG stream.
    """

    def __init__(self, cfg: SystemConfig,
                 episode_length: int = DEFAULT_EPISODE_LENGTH,
                 penalty: float = DEFAULT_PENALTY,
                 feature_mode: str = "db_standardized",
                 normalizer: Optional[FeatureNormalizer] = None):
        if feature_mode not in ("db_standardized", "raw"):
            raise ValueError(f"unknown feature_mode '{feature_mode}'")
        self.cfg = cfg
        self.episode_length = episode_length
        self.penalty = penalty
        self.feature_mode = feature_mode
        self.normalizer = normalizer or FeatureNormalizer(cfg.M * cfg.K)
        self._rng: Optional[np.random.Generator] = None
        self._ap_positions: Optional[np.ndarray] = None
        self.last_report: Optional[PerfReport] = None

    @property
    def feature_dim(self) -> int:
        return self.cfg.M * self.cfg.K

    def _observe(self, sc: Scenario) -> np.ndarray:
        flat = sc.beta.ravel()
        if self.feature_mode == "raw":
            return flat.copy()
        feats = 10.0 * np.log10(flat)
        self.normalizer.update(feats)
        return self.normalizer.transform(feats)

    def reset(self, seed: int) -> EnvState:
        self._rng = np.random.default_rng(seed)
        self._ap_positions = None  # scenario_from_rng draws them once
        sc = scenario_from_rng(self.cfg, self._rng, seed=seed)
        self._ap_positions = sc.ap_positions
        return EnvState(beta_features=self._observe(sc), slot_index=1,
                        scenario=sc)

    def step(self, state: EnvState, action: Action
             ) -> Tuple[EnvState, float, bool]:
        if self._rng is None:
            raise RuntimeError("call reset() before step()")
        if not action.in_bounds():
            log.warning("action %s out of bounds; clamping", action)
            action = action.clipped()
        dec = realize(action, state.scenario, self.cfg)
        report = evaluate(state.scenario, dec, self.cfg)
        self.last_report = report
        reward = reward_from_report(report, self.penalty)

        done = state.slot_index >= self.episode_length
        sc = scenario_from_rng(self.cfg, self._rng,
                               ap_positions=self._ap_positions,
                               seed=state.scenario.seed)
        next_state = EnvState(beta_features=self._observe(sc),
                              slot_index=state.slot_index + 1, scenario=sc)
        return next_state, reward, done
