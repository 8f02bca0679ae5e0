# Resource allocation heuristics: AP activation, antenna selection, and
# fractional power allocation driven by the three coefficients.
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .netgen import Scenario
from .perf import AllocationDecision

ZETA_BOUNDS = (0.05, 1.0)
KAPPA_BOUNDS = (0.0, 4.0)
NU_BOUNDS = (0.0, 4.0)


@dataclass
class Action:
    """The three resource-allocation coefficients."""

    zeta: float   # AP activation ratio
    kappa: float  # antenna concentration exponent
    nu: float     # fractional power-allocation exponent

    def as_array(self) -> np.ndarray:
        return np.array([self.zeta, self.kappa, self.nu])

    def clipped(self) -> "Action":
        return Action(
            zeta=float(np.clip(self.zeta, *ZETA_BOUNDS)),
            kappa=float(np.clip(self.kappa, *KAPPA_BOUNDS)),
            nu=float(np.clip(self.nu, *NU_BOUNDS)),
        )

    def in_bounds(self) -> bool:
        return (ZETA_BOUNDS[0] <= self.zeta <= ZETA_BOUNDS[1]
                and KAPPA_BOUNDS[0] <= self.kappa <= KAPPA_BOUNDS[1]
                and NU_BOUNDS[0] <= self.nu <= NU_BOUNDS[1])


def ap_scores(beta: np.ndarray) -> np.ndarray:
    """Per-AP importance: average large-scale fading across users."""
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    return beta.mean(axis=1)


def select_aps(scores: np.ndarray, zeta: float) -> np.ndarray:
    """Indices of the top zeta fraction of APs by score.

    Cardinality is max(1, round-half-up(zeta * M)); ties broken by lower
    AP index for reproducibility.
    """
    if not (0 < zeta <= 1):
        raise ValueError("zeta must lie in (0, 1]")
    M = scores.shape[0]
    n_on = max(1, int(np.floor(zeta * M + 0.5)))
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:n_on])


def allocate_antennas(scores: np.ndarray, active: np.ndarray, kappa: float,
                      N: int) -> np.ndarray:
    """Active antenna counts: floor(1 + (N-1) w_m) with score-ratio weights."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    if len(active) == 0:
        raise ValueError("active set must be nonempty")
    n_active = np.zeros(scores.shape[0], dtype=int)
    log_s = np.log(scores[active])
    # w_m = (I_m / I_max)^kappa, computed in log domain for large kappa
    w = np.exp(kappa * (log_s - log_s.max()))
    n_active[active] = np.minimum(N, np.floor(1.0 + (N - 1) * w).astype(int))
    return n_active


def allocate_power(gamma: np.ndarray, n_active: np.ndarray,
                   active: np.ndarray, nu: float) -> np.ndarray:
    """Fractional power allocation meeting the per-AP budget with equality.

    eta_mk = (1/N_m) gamma_mk^(nu-1) / sum_j gamma_mj^nu on active rows.
    """
    if nu < 0:
        raise ValueError("nu must be >= 0")
    eta = np.zeros_like(gamma)
    for m in active:
        g = gamma[m]
        if np.all(g <= 0):
            raise ValueError(f"degenerate gamma row at AP {m}")
        # row-normalized powers keep exponentiation in a safe range
        r = g / g.max()
        eta[m] = r ** (nu - 1.0) / (g.max() * (r ** nu).sum() * n_active[m])
    return eta


def realize(action: Action, sc: Scenario, cfg: SystemConfig) -> AllocationDecision:
    """Turn (zeta, kappa, nu) into a concrete allocation for a scenario."""
    scores = ap_scores(sc.beta)
    active = select_aps(scores, action.zeta)
    n_active = allocate_antennas(scores, active, action.kappa, cfg.N)
    eta = allocate_power(sc.gamma, n_active, active, action.nu)
    return AllocationDecision(active=active, n_active=n_active, eta=eta)
