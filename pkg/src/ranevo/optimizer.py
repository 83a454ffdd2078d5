"""Central neuroevolution optimizer service.

One service instance serves every agent. Requests drain from the router's
optimizer mailbox strictly first-in-first-out and exactly one genetic job
runs at a time, so job running intervals never overlap and responses always
come back in request order.

Per job the service: samples the resource provider and turns the requested
effort tier into concrete GA parameters (config overrides applied before
resource scaling), seeds the population from the requesting agent's genome,
and evolves against a fitness function built for that request. The default
fitness is a greedy rollout of the candidate policy on forked environments
over a fixed list of evaluation seeds; rollouts can run in worker processes
kept at low OS priority so the live control loop keeps the CPU.

Determinism: the GA random stream is derived from (service seed, agent id,
correlation id) and evaluation seeds are fixed per service, so an identical
request yields a bit-identical best genome regardless of when it arrives.
"""

from __future__ import annotations

import dataclasses
import os
import threading
import time
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from .federation import (
    OPTIMIZER,
    OptimizationRequest,
    OptimizationResponse,
    Router,
    StaticResourceProvider,
    scaling_factor,
)
from .ga import GaParams, evolve, scale_params, tier_params
from .nets import Genome, forward, unflatten
from .ransim import EnvSpec, RanEnv

EVAL_EPISODES = 5


@dataclass(frozen=True)
class EvalContext:
    """Everything a worker needs to score genomes for one job.

    ``co_genomes`` pins the policies of the other agents as they were when
    the request was made, so a candidate is always scored against a fixed
    world even while its peers keep learning.
    """

    env: EnvSpec
    n_agents: int
    agent_index: int
    seeds: tuple[int, ...]
    co_genomes: tuple[tuple[int, Genome], ...] = ()

    def __post_init__(self):
        if not 0 <= self.agent_index < self.n_agents:
            raise ValueError("agent_index out of range")
        if not self.seeds:
            raise ValueError("need at least one evaluation seed")
        covered = {i for i, _ in self.co_genomes} | {self.agent_index}
        if covered != set(range(self.n_agents)):
            raise ValueError("co_genomes must cover every other agent exactly")


def policy_rollout(policies: dict, env: RanEnv, seed: int, agent_index: int) -> float:
    """Mean per-step reward of one episode for one agent's scope.

    Each policy acts the way its deployed agent would: a linear head picks
    the argmax action, a softmax head samples from its own distribution
    (seeded from the episode seed, so the rollout stays deterministic).
    Anything else would let the optimizer certify fitness the live agent
    never exhibits.
    """
    env.reset(seed)
    steps = env.spec.episode_steps
    rngs = {
        i: np.random.default_rng(np.random.SeedSequence([seed, 0xAC7, i]))
        for i in range(env.n_agents)
        if policies[i].topology.output_head == "softmax"
    }
    total = 0.0
    for _ in range(steps):
        actions = []
        for i in range(env.n_agents):
            out = forward(policies[i], env.observe(i))
            if i in rngs:
                choice = int(rngs[i].choice(out.size, p=out))
            else:
                choice = int(np.argmax(out))
            actions.append(env.decode_action(choice))
        rewards, _ = env.step(actions)
        total += rewards[agent_index]
    return total / steps


def rollout_fitness(genome: Genome, ctx: EvalContext) -> float:
    """Score a candidate: rollout return averaged over the fixed seed list."""
    policies = {i: unflatten(g) for i, g in ctx.co_genomes}
    policies[ctx.agent_index] = unflatten(genome)
    env = RanEnv(ctx.env, ctx.n_agents)
    scores = [policy_rollout(policies, env, s, ctx.agent_index) for s in ctx.seeds]
    return float(np.mean(scores))


def _eval_task(args):
    genome, ctx = args
    return rollout_fitness(genome, ctx)


def _worker_init(niceness: int):
    # worker processes yield the CPU to the live control loop
    if niceness and hasattr(os, "nice"):
        try:
            os.nice(niceness)
        except OSError:
            pass


class SerialEvaluator:
    """In-process evaluation; what the worker pool does, minus the pool."""

    def evaluate(self, genomes, ctx: EvalContext):
        return [rollout_fitness(g, ctx) for g in genomes]

    def close(self):
        pass


class ProcessEvaluator:
    """Rollout evaluation in low-priority worker processes.

    Results merge in genome order (pool map semantics), so the outcome is
    identical to SerialEvaluator.
    """

    def __init__(self, workers: int = 1, niceness: int = 19):
        if workers < 1:
            raise ValueError("need at least one worker")
        self._workers = workers
        self._niceness = niceness
        self._pool = None

    def warm_up(self):
        """Fork the pool; call before any other threads are running."""
        if self._pool is None:
            self._pool = get_context("fork").Pool(
                self._workers, initializer=_worker_init, initargs=(self._niceness,)
            )
        return self

    def evaluate(self, genomes, ctx: EvalContext):
        if self._pool is None:
            self.warm_up()
        return self._pool.map(_eval_task, [(g, ctx) for g in genomes])

    def close(self):
        if self._pool is not None:
            self._pool.terminate()
            self._pool.join()
            self._pool = None


class OptimizationJob:
    """Book-keeping for one request's lifecycle through the queue."""

    def __init__(self, job_id: int, request: OptimizationRequest):
        self.job_id = job_id
        self.request = request
        self.params: GaParams | None = None
        self.status = "queued"
        self.result = None  # (best genome, best fitness, wall ms) once done
        self.started_at: float | None = None
        self.finished_at: float | None = None


class NeOptimizer:
    """The single sequential GA worker behind the optimizer mailbox.

    ``fitness_factory(request, params)`` returns the batch fitness callable
    for a job; the default evaluates greedy rollouts via ``eval_context_factory``,
    which the harness supplies to close over environment and peer state.
    """

    def __init__(
        self,
        router: Router,
        base_seed: int,
        eval_context_factory=None,
        fitness_factory=None,
        evaluator=None,
        resource_provider=None,
        ga_overrides: dict | None = None,
        generation_log=None,
    ):
        if fitness_factory is None and eval_context_factory is None:
            raise ValueError("need eval_context_factory or fitness_factory")
        self.router = router
        self.inbox = router.register(OPTIMIZER)
        self.base_seed = base_seed
        self.eval_context_factory = eval_context_factory
        self.fitness_factory = fitness_factory
        self.evaluator = evaluator if evaluator is not None else SerialEvaluator()
        self.resource_provider = (
            resource_provider if resource_provider is not None else StaticResourceProvider()
        )
        self.ga_overrides = dict(ga_overrides) if ga_overrides else {}
        self.generation_log = generation_log
        self.jobs: list[OptimizationJob] = []
        self.job_intervals: list[tuple[float, float]] = []
        self._thread: threading.Thread | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self):
        self._thread = threading.Thread(target=self._serve, name="ne-optimizer", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._thread is not None:
            self.inbox.put(None)
            self._thread.join()
            self._thread = None
        self.evaluator.close()

    def _serve(self):
        while True:
            item = self.inbox.get()
            if item is None:
                break
            self.handle(item)

    # -- job processing ----------------------------------------------------

    def job_params(self, request: OptimizationRequest) -> GaParams:
        """Tier base, config overrides, then resource scaling, then target."""
        params = tier_params(request.indication)
        if self.ga_overrides:
            params = dataclasses.replace(params, **self.ga_overrides)
        s = scaling_factor(self.resource_provider.sample())
        params = scale_params(params, s)
        return dataclasses.replace(params, target_fitness=request.target_return)

    def _fitness_fn(self, request: OptimizationRequest, params: GaParams):
        if self.fitness_factory is not None:
            return self.fitness_factory(request, params)
        ctx = self.eval_context_factory(request)
        return lambda genomes: self.evaluator.evaluate(genomes, ctx)

    def handle(self, envelope):
        request = OptimizationRequest.from_envelope(envelope)
        job = OptimizationJob(len(self.jobs) + 1, request)
        self.jobs.append(job)
        job.params = self.job_params(request)
        job.status = "running"
        job.started_at = time.perf_counter()

        rng = np.random.default_rng(
            np.random.SeedSequence([self.base_seed, request.agent_id, request.correlation_id])
        )
        fitness_fn = self._fitness_fn(request, job.params)

        gen_clock = [job.started_at]

        def log_generation(gen, best, mean):
            now = time.perf_counter()
            if self.generation_log is not None:
                self.generation_log(
                    {
                        "job_id": job.job_id,
                        "agent_id": request.agent_id,
                        "generation": gen,
                        "best_fitness": best,
                        "mean_fitness": mean,
                        "wall_ms": (now - gen_clock[0]) * 1000.0,
                    }
                )
            gen_clock[0] = now

        result = evolve(request.genome, job.params, fitness_fn, rng, on_generation=log_generation)

        job.finished_at = time.perf_counter()
        wall_ms = (job.finished_at - job.started_at) * 1000.0
        job.result = (result.best_genome, result.best_fitness, wall_ms)
        job.status = "done"
        self.job_intervals.append((job.started_at, job.finished_at))

        response = OptimizationResponse(
            request.agent_id,
            request.correlation_id,
            result.best_genome,
            result.best_fitness,
            job.params,
            wall_ms,
        )
        self.router.send(response.to_envelope())
