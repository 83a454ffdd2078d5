"""Experiment runner: wires environment, agents, optimizer, and router.

One call to ``run_experiment`` plays a full configured run: the control loop
steps the environment episode by episode while the optimizer service works
jobs on its own thread, connected only through the message router.

Determinism contract: a run is a pure function of (config, seed) except for
wall-clock fields (``drl_action_time_ms``, ``ne_active``, ``ne_job_ms``,
``wall_ms``, ``total_ne_wall_ms``). Evolved genomes are adopted at fixed
window boundaries, not at arrival time, so replaying a seed reproduces the
exact trajectory; the baseline variant differs from the GA variant only
through deployed genomes.
"""

from __future__ import annotations

import csv
import dataclasses
import os
import time
from dataclasses import dataclass

import numpy as np

from .agents import build_agent, should_trigger
from .config import ExperimentConfig
from .federation import (
    CorrelationIds,
    OptimizationRequest,
    OptimizationResponse,
    Router,
    deploy_gate,
)
from .nets import param_digest
from .optimizer import EVAL_EPISODES, EvalContext, NeOptimizer, ProcessEvaluator
from .ransim import RanEnv

_AGENT_TAG = 0xA6E27
_EPISODE_TAG = 0xE915
_EVAL_TAG = 0xE7A1
_RESPONSE_TIMEOUT_S = 3600.0


@dataclass(frozen=True)
class MetricsRecord:
    run_seed: int
    episode: int
    episode_return: float
    epsilon: float
    drl_action_time_ms: float
    ne_active: bool
    ne_job_ms: float | None  # set only on the episode that consumed a job
    ga_triggered: bool
    deployed: bool
    agent_id: int


@dataclass(frozen=True)
class RunSummary:
    agent_id: int
    episodes_to_target: int | None
    final_window_avg: float
    stalled: bool
    total_ne_jobs: int
    total_ne_wall_ms: float


@dataclass(frozen=True)
class GateAudit:
    """One optimizer response as seen by the deploy gate."""

    agent_id: int
    correlation_id: int
    candidate_fitness: float
    incumbent_fitness: float
    gate_passed: bool
    digest_before: bytes
    digest_after: bytes


@dataclass
class RunResult:
    config_name: str
    run_seed: int
    ga_enabled: bool
    ne_interval: int
    target_return: float
    records: list
    summaries: list
    ga_log: list
    gate_audits: list
    job_spans: list
    episode_spans: list


def episode_seed(run_seed: int, episode: int) -> int:
    return int(
        np.random.SeedSequence([run_seed, _EPISODE_TAG, episode]).generate_state(1)[0]
    )


def evaluation_seeds(run_seed: int) -> tuple:
    """The fixed environment seed list every fitness rollout uses."""
    state = np.random.SeedSequence([run_seed, _EVAL_TAG]).generate_state(EVAL_EPISODES)
    return tuple(int(x) for x in state)


def _policy_digest(agent) -> bytes:
    net = agent.online if hasattr(agent, "online") else agent.actor
    return param_digest(net)


def run_experiment(
    cfg: ExperimentConfig,
    seed: int,
    ga_enabled: bool | None = None,
    episodes: int | None = None,
    evaluator=None,
) -> RunResult:
    """Play one full run; returns every record plus per-agent summaries."""
    episodes = cfg.episodes if episodes is None else episodes
    ga_on = cfg.ga_enabled if ga_enabled is None else ga_enabled
    interval = cfg.ne_interval
    steps = cfg.env.episode_steps

    env = RanEnv(cfg.env, cfg.n_agents)
    agents = [
        build_agent(
            cfg.agent, np.random.default_rng(np.random.SeedSequence([seed, _AGENT_TAG, i]))
        )
        for i in range(cfg.n_agents)
    ]

    router = Router()
    mailboxes = {i: router.register(f"agent:{i}") for i in range(cfg.n_agents)}
    ids = {i: CorrelationIds(i) for i in range(cfg.n_agents)}
    co_table: dict = {}  # correlation_id -> frozen peer genomes
    pending: dict = {i: None for i in range(cfg.n_agents)}  # outstanding request
    ga_log: list = []
    gate_audits: list = []
    eval_seeds = evaluation_seeds(seed)

    def ctx_factory(request):
        return EvalContext(
            env=cfg.env,
            n_agents=cfg.n_agents,
            agent_index=request.agent_id,
            seeds=eval_seeds,
            co_genomes=co_table[request.correlation_id],
        )

    own_evaluator = None
    optimizer = None
    if ga_on:
        if evaluator is None:
            # fork the worker pool before any other thread exists
            evaluator = own_evaluator = ProcessEvaluator(workers=1, niceness=19).warm_up()
        optimizer = NeOptimizer(
            router,
            base_seed=seed,
            eval_context_factory=ctx_factory,
            evaluator=evaluator,
            resource_provider=cfg.resource_provider(),
            ga_overrides=cfg.ga_overrides,
            generation_log=ga_log.append,
        )
        optimizer.start()

    records: list = []
    episode_spans: list = []
    flat_clock = time.perf_counter
    try:
        for ep in range(1, episodes + 1):
            env.reset(episode_seed(seed, ep))
            ep_t0 = flat_clock()
            reward_sums = [0.0] * cfg.n_agents
            act_time = [0.0] * cfg.n_agents
            for _ in range(steps):
                obs = [env.observe(i) for i in range(cfg.n_agents)]
                action_ids = []
                for i, agent in enumerate(agents):
                    t0 = flat_clock()
                    action_ids.append(agent.select_action(obs[i]))
                    act_time[i] += flat_clock() - t0
                actions = [env.decode_action(a) for a in action_ids]
                rewards, _ = env.step(actions)
                next_obs = [env.observe(i) for i in range(cfg.n_agents)]
                done = env.snap.time_step == steps
                for i, agent in enumerate(agents):
                    reward_sums[i] += rewards[i]
                    agent.observe(obs[i], action_ids[i], rewards[i], next_obs[i], done)
            ep_t1 = flat_clock()
            episode_spans.append((ep_t0, ep_t1))

            triggered = [False] * cfg.n_agents
            deployed = [False] * cfg.n_agents
            job_ms: list = [None] * cfg.n_agents
            for i, agent in enumerate(agents):
                agent.end_episode()
                agent.monitor.push(reward_sums[i] / steps)

            # boundary housekeeping in fixed agent order keeps replays exact
            for i, agent in enumerate(agents):
                if not agent.monitor.at_boundary():
                    continue
                if pending[i] is not None:
                    request = pending[i]
                    try:
                        envelope = mailboxes[i].get(timeout=_RESPONSE_TIMEOUT_S)
                    except Exception:
                        raise RuntimeError(
                            f"optimizer response for agent {i} never arrived"
                        ) from None
                    response = OptimizationResponse.from_envelope(envelope)
                    if response.correlation_id != request.correlation_id:
                        raise RuntimeError("response does not match the pending request")
                    before = _policy_digest(agent)
                    ok = deploy_gate(response.fitness, request.incumbent_fitness)
                    agent.apply_genome(response.genome, gate_passed=ok)
                    gate_audits.append(
                        GateAudit(
                            agent_id=i,
                            correlation_id=response.correlation_id,
                            candidate_fitness=response.fitness,
                            incumbent_fitness=request.incumbent_fitness,
                            gate_passed=ok,
                            digest_before=before,
                            digest_after=_policy_digest(agent),
                        )
                    )
                    deployed[i] = ok
                    job_ms[i] = response.wall_time_ms
                    co_table.pop(request.correlation_id, None)
                    pending[i] = None
                    agent.outstanding = False
                elif ga_on and ep + interval <= episodes:
                    # a job whose result could never be adopted in-run is not asked for
                    tier = should_trigger(agent.monitor, cfg.agent, outstanding=False)
                    if tier is not None:
                        window_avg = agent.monitor.window_avg()
                        request = OptimizationRequest(
                            agent_id=i,
                            correlation_id=ids[i].next(),
                            genome=agent.get_genome(),
                            indication=tier,
                            window_returns=tuple(agent.monitor.returns),
                            target_return=cfg.agent.target_return,
                            incumbent_fitness=window_avg,
                        )
                        co_table[request.correlation_id] = tuple(
                            (j, agents[j].get_genome())
                            for j in range(cfg.n_agents)
                            if j != i
                        )
                        router.send(request.to_envelope())
                        pending[i] = request
                        agent.outstanding = True
                        triggered[i] = True
                agent.monitor.roll()

            for i, agent in enumerate(agents):
                records.append(
                    MetricsRecord(
                        run_seed=seed,
                        episode=ep,
                        episode_return=reward_sums[i] / steps,
                        epsilon=float(agent.epsilon),
                        drl_action_time_ms=act_time[i] / steps * 1000.0,
                        ne_active=False,  # filled in below from job spans
                        ne_job_ms=job_ms[i],
                        ga_triggered=triggered[i],
                        deployed=deployed[i],
                        agent_id=i,
                    )
                )
    finally:
        if optimizer is not None:
            optimizer.stop()
        if own_evaluator is not None:
            own_evaluator.close()

    job_spans = list(optimizer.job_intervals) if optimizer is not None else []
    records = _mark_ne_active(records, episode_spans, job_spans)
    summaries = summarize(records, interval, cfg.agent.target_return)
    return RunResult(
        config_name=cfg.name,
        run_seed=seed,
        ga_enabled=ga_on,
        ne_interval=interval,
        target_return=cfg.agent.target_return,
        records=records,
        summaries=summaries,
        ga_log=ga_log,
        gate_audits=gate_audits,
        job_spans=job_spans,
        episode_spans=episode_spans,
    )


def _mark_ne_active(records, episode_spans, job_spans):
    """Flag episodes whose wall-clock span overlapped any optimizer job."""
    if not job_spans:
        return records
    out = []
    for rec in records:
        t0, t1 = episode_spans[rec.episode - 1]
        active = any(s < t1 and e > t0 for s, e in job_spans)
        out.append(dataclasses.replace(rec, ne_active=active) if active else rec)
    return out


# -- summaries ------------------------------------------------------------


def summarize(records, ne_interval: int, target_return: float):
    """Per-agent convergence summary.

    episodes_to_target: first episode whose trailing ne_interval-episode
    average reaches the target. stalled: the final window average is below
    target and the last of the non-overlapping windows improved on nothing
    three windows back.
    """
    if not records:
        raise ValueError("no metrics to summarize")
    agents = sorted({r.agent_id for r in records})
    summaries = []
    for a in agents:
        rows = sorted((r for r in records if r.agent_id == a), key=lambda r: r.episode)
        returns = [r.episode_return for r in rows]
        episodes_to_target = None
        if len(returns) >= ne_interval:
            csum = np.concatenate([[0.0], np.cumsum(returns)])
            for e in range(ne_interval, len(returns) + 1):
                if (csum[e] - csum[e - ne_interval]) / ne_interval >= target_return:
                    episodes_to_target = e
                    break
        tail = returns[-ne_interval:]
        final_avg = float(np.mean(tail))
        windows = [
            float(np.mean(returns[k : k + ne_interval]))
            for k in range(0, len(returns) - ne_interval + 1, ne_interval)
        ]
        stalled = final_avg < target_return and (
            len(windows) < 3 or windows[-1] <= windows[-3]
        )
        summaries.append(
            RunSummary(
                agent_id=a,
                episodes_to_target=episodes_to_target,
                final_window_avg=final_avg,
                stalled=stalled,
                total_ne_jobs=sum(1 for r in rows if r.ga_triggered),
                total_ne_wall_ms=float(sum(r.ne_job_ms or 0.0 for r in rows)),
            )
        )
    return summaries


# -- CSV outputs ----------------------------------------------------------

METRICS_HEADER = (
    "run_seed",
    "episode",
    "return",
    "epsilon",
    "drl_action_time_ms",
    "ne_active",
    "ne_job_ms",
    "ga_triggered",
    "deployed",
    "agent_id",
)
SUMMARY_HEADER = (
    "agent_id",
    "episodes_to_target",
    "final_window_avg",
    "stalled",
    "total_ne_jobs",
    "total_ne_wall_ms",
)
CURVE_HEADER = ("episode", "agent_id", "trailing_avg", "ga_enabled")
GA_LOG_HEADER = ("job_id", "agent_id", "generation", "best_fitness", "mean_fitness", "wall_ms")


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    except OSError as e:
        raise OSError(f"cannot write '{path}': {e}") from e


def write_outputs(result: RunResult, out_dir) -> list:
    """Write metrics.csv, summary.csv, reward_curve.csv, and ga_log.csv."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    path = os.path.join(out_dir, "metrics.csv")
    _write_csv(
        path,
        METRICS_HEADER,
        (
            (
                r.run_seed,
                r.episode,
                r.episode_return,
                r.epsilon,
                r.drl_action_time_ms,
                r.ne_active,
                r.ne_job_ms,
                r.ga_triggered,
                r.deployed,
                r.agent_id,
            )
            for r in result.records
        ),
    )
    paths.append(path)

    path = os.path.join(out_dir, "summary.csv")
    _write_csv(
        path,
        SUMMARY_HEADER,
        (
            (
                s.agent_id,
                s.episodes_to_target,
                s.final_window_avg,
                s.stalled,
                s.total_ne_jobs,
                s.total_ne_wall_ms,
            )
            for s in result.summaries
        ),
    )
    paths.append(path)

    curve_rows = []
    by_agent: dict = {}
    for r in sorted(result.records, key=lambda r: (r.agent_id, r.episode)):
        trail = by_agent.setdefault(r.agent_id, [])
        trail.append(r.episode_return)
        window = trail[-result.ne_interval :]
        curve_rows.append(
            (r.episode, r.agent_id, float(np.mean(window)), result.ga_enabled)
        )
    path = os.path.join(out_dir, "reward_curve.csv")
    _write_csv(path, CURVE_HEADER, curve_rows)
    paths.append(path)

    path = os.path.join(out_dir, "ga_log.csv")
    _write_csv(
        path,
        GA_LOG_HEADER,
        (
            (
                g["job_id"],
                g["agent_id"],
                g["generation"],
                g["best_fitness"],
                g["mean_fitness"],
                g["wall_ms"],
            )
            for g in result.ga_log
        ),
    )
    paths.append(path)
    return paths
