"""Deterministic multi-cell RAN simulator.

The model: a handful of cells, each with a fixed downlink PRB budget derived
from its bandwidth (one PRB per 200 kHz, so 50 PRBs at 10 MHz), and a set of
UEs with integer CQI in [1, 15] and a fixed per-episode traffic demand. Control
agents move single PRBs between UEs, hand UEs over between cells, or do
nothing; between control steps every UE's CQI performs a bounded +-1 random
walk. The reward is throughput satisfaction times Jain fairness on a 0..1000
scale, optionally reduced by a handover-trap penalty that models short-term
disruption cost.

Time ordering within one step follows the control cycle: actions are executed,
rewards are collected on the post-action state, then the channel state
transitions (CQI walk) for the next step.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

CQI_MIN = 1
CQI_MAX = 15
HZ_PER_PRB = 200_000.0
VERBS = ("prb_up", "prb_down", "handover", "noop")
SINGLE_CELL_VERBS = ("prb_up", "prb_down", "noop")


def cqi_to_efficiency(cqi: int) -> float:
    """Spectral efficiency in bits/s/Hz: a monotone linear 0.4 * CQI model."""
    if not CQI_MIN <= cqi <= CQI_MAX:
        raise ValueError(f"cqi {cqi} outside [{CQI_MIN}, {CQI_MAX}]")
    return 0.4 * cqi


def total_prbs_for_bandwidth(bandwidth_hz: float) -> int:
    return max(1, int(round(bandwidth_hz / HZ_PER_PRB)))


@dataclass(frozen=True)
class TrapProfile:
    """Short-term reward penalty charged to an agent after it triggers a handover."""

    handover_penalty: float = 400.0
    penalty_duration: int = 3

    def __post_init__(self):
        if self.handover_penalty < 0:
            raise ValueError("handover_penalty must be >= 0")
        if self.penalty_duration < 0:
            raise ValueError("penalty_duration must be >= 0")


@dataclass(frozen=True)
class EnvSpec:
    """Static description of one simulated RAN scenario."""

    cells: int = 1
    ues: int = 13
    bandwidth_hz: float = 10e6
    max_demand_bps: float = 1e6
    episode_steps: int = 50
    cqi_init_range: tuple[int, int] = (5, 12)
    cqi_walk_prob: float = 0.2
    trap: TrapProfile | None = None
    # Optional per-cell overrides used by trap scenarios; None means uniform.
    cell_cqi_init_ranges: tuple[tuple[int, int], ...] | None = None
    cell_demand_bps: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.cells < 1 or self.ues < 1:
            raise ValueError("need at least one cell and one UE")
        if not 0.0 < self.max_demand_bps <= 1e6:
            raise ValueError("max_demand_bps must be in (0, 1e6]")
        lo, hi = self.cqi_init_range
        if not (CQI_MIN <= lo <= hi <= CQI_MAX):
            raise ValueError("cqi_init_range must be within [1, 15]")
        if not 0.0 <= self.cqi_walk_prob <= 0.5:
            raise ValueError("cqi_walk_prob must be in [0, 0.5]")
        if self.cell_cqi_init_ranges is not None:
            if len(self.cell_cqi_init_ranges) != self.cells:
                raise ValueError("cell_cqi_init_ranges needs one range per cell")
            for lo, hi in self.cell_cqi_init_ranges:
                if not (CQI_MIN <= lo <= hi <= CQI_MAX):
                    raise ValueError("per-cell cqi range must be within [1, 15]")
        if self.cell_demand_bps is not None:
            if len(self.cell_demand_bps) != self.cells:
                raise ValueError("cell_demand_bps needs one value per cell")
            for d in self.cell_demand_bps:
                if not 0.0 < d <= 1e6:
                    raise ValueError("per-cell demand must be in (0, 1e6]")

    @property
    def total_prbs(self) -> int:
        return total_prbs_for_bandwidth(self.bandwidth_hz)


@dataclass(frozen=True)
class UeState:
    ue_id: int
    cell: int
    cqi: int
    demand_bps: float


@dataclass(frozen=True)
class CellState:
    cell_id: int
    bandwidth_hz: float
    total_prbs: int
    prb_share: dict[int, int]


@dataclass(frozen=True)
class RanAction:
    ue_index: int
    verb: str

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        if self.ue_index < 0:
            raise ValueError("ue_index must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    served_bps: float
    demand_bps: float
    fairness: float
    total: float


@dataclass
class RanSnapshot:
    """Full mutable simulator state; array-backed for speed.

    ``cqi``, ``demand``, ``cell_of`` and ``prbs`` are parallel arrays indexed
    by ue_id. ``penalty_steps_left`` holds the per-agent trap countdowns.
    """

    spec: EnvSpec
    time_step: int
    cqi: np.ndarray
    demand: np.ndarray
    cell_of: np.ndarray
    prbs: np.ndarray
    rng: np.random.Generator
    penalty_steps_left: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    @property
    def ues(self) -> list[UeState]:
        return [
            UeState(i, int(self.cell_of[i]), int(self.cqi[i]), float(self.demand[i]))
            for i in range(len(self.cqi))
        ]

    @property
    def cells(self) -> list[CellState]:
        out = []
        for c in range(self.spec.cells):
            share = {
                int(i): int(self.prbs[i]) for i in np.flatnonzero(self.cell_of == c)
            }
            out.append(CellState(c, self.spec.bandwidth_hz, self.spec.total_prbs, share))
        return out

    def clone(self) -> "RanSnapshot":
        rng = np.random.default_rng()
        rng.bit_generator.state = copy.deepcopy(self.rng.bit_generator.state)
        return RanSnapshot(
            self.spec,
            self.time_step,
            self.cqi.copy(),
            self.demand.copy(),
            self.cell_of.copy(),
            self.prbs.copy(),
            rng,
            self.penalty_steps_left.copy(),
        )

    def scope_ue_ids(self, cell: int | None) -> np.ndarray:
        """ue_ids in the scope (a cell, or all for None), ascending."""
        if cell is None:
            return np.arange(len(self.cqi))
        return np.flatnonzero(self.cell_of == cell)


def ue_throughput(ue: UeState, cell: CellState) -> float:
    """Demand-capped share of the cell's capacity at the UE's efficiency."""
    prbs = cell.prb_share.get(ue.ue_id, 0)
    if prbs <= 0:
        return 0.0
    rate = (prbs / cell.total_prbs) * cell.bandwidth_hz * cqi_to_efficiency(ue.cqi)
    return min(ue.demand_bps, rate)


def served_vector(snap: RanSnapshot) -> np.ndarray:
    """Per-UE served bps for the whole snapshot (vectorized ue_throughput)."""
    spec = snap.spec
    rate = (snap.prbs / spec.total_prbs) * spec.bandwidth_hz * 0.4 * snap.cqi
    return np.minimum(snap.demand, rate)


def jain_fairness(throughputs) -> float:
    """Jain index (sum x)^2 / (n * sum x^2); all-zero input counts as fair."""
    x = np.asarray(throughputs, dtype=np.float64)
    if x.size == 0:
        raise ValueError("fairness of an empty set is undefined")
    if np.any(x < 0):
        raise ValueError("throughputs must be >= 0")
    sq = float(np.dot(x, x))
    if sq == 0.0:
        return 1.0
    s = float(x.sum())
    return (s * s) / (x.size * sq)


def reward_breakdown(
    snap: RanSnapshot, scope_cell: int | None = None, agent_index: int = 0
) -> RewardBreakdown:
    """Reward for one scope: 1000 * (served/demand) * fairness, minus any
    active trap penalty for the acting agent, clamped to >= 0.

    An empty scope (or zero total demand) scores 0 with fairness 1. Without an
    active penalty the total is exactly the product form.
    """
    ids = snap.scope_ue_ids(scope_cell)
    if ids.size == 0:
        return RewardBreakdown(0.0, 0.0, 1.0, 0.0)
    served = served_vector(snap)[ids]
    demand = float(snap.demand[ids].sum())
    served_total = float(served.sum())
    if demand <= 0.0:
        return RewardBreakdown(served_total, demand, 1.0, 0.0)
    fairness = jain_fairness(served)
    total = 1000.0 * (served_total / demand) * fairness
    if snap.spec.trap is not None and snap.penalty_steps_left[agent_index] > 0:
        total -= snap.spec.trap.handover_penalty
    return RewardBreakdown(served_total, demand, fairness, max(0.0, total))


class RanEnv:
    """One live environment instance owned by a single logical thread.

    ``n_agents`` is 1 (global reward and observation scope) or equal to the
    number of cells (agent i manages and is rewarded on cell i).
    """

    def __init__(self, spec: EnvSpec, n_agents: int = 1):
        if n_agents != 1 and n_agents != spec.cells:
            raise ValueError("n_agents must be 1 or match the cell count")
        self.spec = spec
        self.n_agents = n_agents
        self.snap: RanSnapshot | None = None
        self._trace = None

    # -- geometry ----------------------------------------------------------

    def scope_of(self, agent: int) -> int | None:
        return None if self.n_agents == 1 else agent

    @property
    def verbs(self) -> tuple[str, ...]:
        return SINGLE_CELL_VERBS if self.spec.cells == 1 else VERBS

    @property
    def n_actions(self) -> int:
        return self.spec.ues * len(self.verbs)

    @property
    def obs_size(self) -> int:
        return 3 * self.spec.ues + 1

    def decode_action(self, action_id: int) -> RanAction:
        verbs = self.verbs
        if not 0 <= action_id < self.n_actions:
            raise ValueError(f"action id {action_id} outside [0, {self.n_actions})")
        return RanAction(action_id // len(verbs), verbs[action_id % len(verbs)])

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int) -> RanSnapshot:
        """Fresh episode: round-robin attachment, equal PRB split, seeded CQI."""
        spec = self.spec
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
        n = spec.ues
        cell_of = np.arange(n, dtype=np.int64) % spec.cells
        cqi = np.empty(n, dtype=np.int64)
        demand = np.empty(n, dtype=np.float64)
        for c in range(spec.cells):
            ids = np.flatnonzero(cell_of == c)
            if spec.cell_cqi_init_ranges is not None:
                lo, hi = spec.cell_cqi_init_ranges[c]
            else:
                lo, hi = spec.cqi_init_range
            cqi[ids] = rng.integers(lo, hi + 1, size=ids.size)
            if spec.cell_demand_bps is not None:
                demand[ids] = spec.cell_demand_bps[c]
            else:
                demand[ids] = spec.max_demand_bps
        prbs = np.zeros(n, dtype=np.int64)
        for c in range(spec.cells):
            ids = np.flatnonzero(cell_of == c)
            if ids.size == 0:
                continue
            base, rem = divmod(spec.total_prbs, ids.size)
            prbs[ids] = base
            prbs[ids[:rem]] += 1  # remainder to lowest ue_ids
        self.snap = RanSnapshot(
            spec, 0, cqi, demand, cell_of, prbs, rng,
            np.zeros(self.n_agents, dtype=np.int64),
        )
        return self.snap

    def observe(self, agent: int = 0) -> np.ndarray:
        """Fixed-length scope observation.

        Per UE slot (ue_id order, zero-padded): cqi/15, served/demand ratio,
        PRB fraction of its cell; then connected-UE count over max UEs.
        """
        snap = self.snap
        spec = self.spec
        ids = snap.scope_ue_ids(self.scope_of(agent))
        served = served_vector(snap)
        obs = np.zeros(self.obs_size)
        k = ids.size
        if k:
            obs[0:3 * k:3] = snap.cqi[ids] / 15.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(snap.demand[ids] > 0, served[ids] / snap.demand[ids], 0.0)
            obs[1:3 * k:3] = ratio
            obs[2:3 * k:3] = snap.prbs[ids] / spec.total_prbs
        obs[-1] = k / spec.ues
        return obs

    def rewards(self) -> list[RewardBreakdown]:
        return [
            reward_breakdown(self.snap, self.scope_of(a), a) for a in range(self.n_agents)
        ]

    def step(self, actions) -> tuple[list[float], list[RewardBreakdown]]:
        """Execute one joint control step; returns per-agent reward totals.

        Verbs are applied in agent index order, rewards collected on the
        post-action state, then CQI transitions and penalty countdowns.
        """
        snap = self.snap
        spec = self.spec
        if len(actions) != self.n_agents:
            raise ValueError(f"expected {self.n_agents} actions, got {len(actions)}")
        handed_over = np.zeros(self.n_agents, dtype=bool)
        for agent, action in enumerate(actions):
            self._apply(agent, action, handed_over)

        breakdowns = self.rewards()
        totals = [b.total for b in breakdowns]
        if self._trace is not None:
            self._write_trace(breakdowns)

        walked = snap.rng.random(spec.ues)
        snap.cqi = np.clip(
            snap.cqi - (walked < spec.cqi_walk_prob)
            + (walked > 1.0 - spec.cqi_walk_prob),
            CQI_MIN, CQI_MAX,
        )
        np.maximum(snap.penalty_steps_left - 1, 0, out=snap.penalty_steps_left)
        if spec.trap is not None:
            snap.penalty_steps_left[handed_over] = spec.trap.penalty_duration
        snap.time_step += 1
        return totals, breakdowns

    def _apply(self, agent: int, action: RanAction, handed_over: np.ndarray):
        snap = self.snap
        spec = self.spec
        if action.ue_index >= spec.ues:
            raise ValueError(f"ue_index {action.ue_index} >= {spec.ues}")
        if action.verb == "noop":
            return
        if action.verb == "handover" and spec.cells == 1:
            raise ValueError("handover is invalid in a single-cell experiment")
        ids = snap.scope_ue_ids(self.scope_of(agent))
        if action.ue_index >= ids.size:
            return  # empty slot, nothing to act on
        ue = int(ids[action.ue_index])
        cell = int(snap.cell_of[ue])
        if action.verb == "prb_up":
            used = int(snap.prbs[snap.cell_of == cell].sum())
            if used < spec.total_prbs:
                snap.prbs[ue] += 1
        elif action.verb == "prb_down":
            if snap.prbs[ue] > 0:
                snap.prbs[ue] -= 1
        elif action.verb == "handover":
            # Two-cell deployments: push the UE to the other cell, PRBs reset.
            snap.cell_of[ue] = 1 - cell
            snap.prbs[ue] = 0
            handed_over[agent] = True

    # -- optional per-step trajectory dump ---------------------------------

    def attach_trace(self, fileobj):
        """Stream one CSV row per step: time, per-UE cqi/served, reward parts."""
        import csv

        self._trace = csv.writer(fileobj)
        header = ["time_step"]
        header += [f"cqi_{i}" for i in range(self.spec.ues)]
        header += [f"served_bps_{i}" for i in range(self.spec.ues)]
        for a in range(self.n_agents):
            header += [f"served_total_{a}", f"fairness_{a}", f"reward_{a}"]
        self._trace.writerow(header)

    def _write_trace(self, breakdowns):
        snap = self.snap
        row = [snap.time_step]
        row += [int(c) for c in snap.cqi]
        row += [f"{s:.1f}" for s in served_vector(snap)]
        for b in breakdowns:
            row += [f"{b.served_bps:.1f}", f"{b.fairness:.6f}", f"{b.total:.6f}"]
        self._trace.writerow(row)
