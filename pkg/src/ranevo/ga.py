"""Genetic algorithm over flat network genomes.

Seeded neuroevolution: the incumbent policy network is individual 0 of the
initial population and every other individual is a mutated copy of it, so the
search is a local refinement around deployed behaviour rather than a restart
from noise. Fitness is supplied as a batch callable so evaluation can be
farmed out to worker processes.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from .nets import Genome


class GaTier(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class GaParams:
    generations: int
    population: int
    elitism: int
    mutation_rate: float
    crossover_rate: float
    mutation_sigma: float = 0.05
    tournament_size: int = 3
    target_fitness: float | None = None

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not 1 <= self.elitism <= self.population:
            raise ValueError("elitism must be in [1, population]")
        for name in ("mutation_rate", "crossover_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.mutation_sigma <= 0:
            raise ValueError("mutation_sigma must be > 0")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")


# effort tiers: (generations, population, elitism, mutation_rate, crossover_rate)
_TIERS = {
    GaTier.LOW: (50, 40, 1, 0.01, 0.3),
    GaTier.MEDIUM: (100, 70, 2, 0.1, 0.5),
    GaTier.HIGH: (300, 125, 5, 0.2, 0.8),
}


def tier_params(tier: GaTier) -> GaParams:
    g, p, e, mr, cr = _TIERS[tier]
    return GaParams(g, p, e, mr, cr)


def scale_params(params: GaParams, factor: float) -> GaParams:
    """Shrink a tier to the available compute budget.

    Population and generations scale by ``factor`` with floors of 2 and 1
    (so even factor 0 leaves a minimal viable run); elitism is clamped to the
    scaled population; rates are left alone.
    """
    if not 0.0 <= factor <= 1.0:
        raise ValueError("scaling factor must be in [0, 1]")
    pop = max(2, math.ceil(factor * params.population))
    gen = max(1, math.ceil(factor * params.generations))
    return dataclasses.replace(
        params, generations=gen, population=pop, elitism=min(params.elitism, pop)
    )


def mutate(genome: Genome, rate: float, sigma: float, rng: np.random.Generator) -> Genome:
    """Per-gene Bernoulli(rate) Gaussian perturbation N(0, sigma^2)."""
    values = genome.values.copy()
    mask = rng.random(values.size) < rate
    values[mask] += rng.normal(0.0, sigma, size=int(mask.sum()))
    return Genome(values, genome.topology)


def crossover(a: Genome, b: Genome) -> Genome:
    """Elementwise arithmetic mean of the parents."""
    if a.topology != b.topology:
        raise ValueError("cannot cross genomes of different topologies")
    return Genome((a.values + b.values) / 2.0, a.topology)


def tournament_select(fitnesses, rng: np.random.Generator, k: int = 3) -> int:
    """Index of the fittest of k uniform draws (with replacement).

    Fitness ties go to the lower population index.
    """
    fits = np.asarray(fitnesses, dtype=np.float64)
    if fits.size == 0:
        raise ValueError("empty population")
    cand = np.sort(rng.integers(0, fits.size, size=k))
    return int(cand[int(np.argmax(fits[cand]))])


def init_population(
    seed: Genome, size: int, rate: float, sigma: float, rng: np.random.Generator
) -> list[Genome]:
    """Seed copy at index 0, mutated copies of it everywhere else."""
    if size < 1:
        raise ValueError("population size must be >= 1")
    return [seed.copy()] + [mutate(seed, rate, sigma, rng) for _ in range(size - 1)]


@dataclass
class GaResult:
    best_genome: Genome
    best_fitness: float
    generations_run: int
    evaluations: int
    history: list[tuple[int, float, float]]  # (generation, best, mean)


def _check_fits(fits, expected: int) -> np.ndarray:
    arr = np.asarray(fits, dtype=np.float64)
    if arr.shape != (expected,):
        raise ValueError(f"fitness_fn returned {arr.shape}, wanted ({expected},)")
    if expected and not np.all(np.isfinite(arr)):
        raise ValueError("fitness_fn returned non-finite values")
    return arr


def evolve(
    seed: Genome,
    params: GaParams,
    fitness_fn,
    rng: np.random.Generator,
    on_generation=None,
) -> GaResult:
    """Run the GA; one generation is one fitness evaluation round.

    ``fitness_fn(list_of_genomes) -> list_of_floats`` is called once per
    generation for the individuals that need scoring (elites keep their
    retained fitness and are never re-evaluated). With generations=1 the
    initial population is evaluated and the best returned, untouched by any
    variation. The run stops early once the best fitness reaches
    ``params.target_fitness``.
    """
    pop = init_population(
        seed, params.population, params.mutation_rate, params.mutation_sigma, rng
    )
    fits = _check_fits(fitness_fn(pop), len(pop))
    evaluations = len(pop)

    def gen_stats(gen):
        i = int(np.argmax(fits))
        best, mean = float(fits[i]), float(fits.mean())
        history.append((gen, best, mean))
        if on_generation is not None:
            on_generation(gen, best, mean)
        return i

    history: list[tuple[int, float, float]] = []
    best_i = gen_stats(1)
    best_genome, best_fit = pop[best_i].copy(), float(fits[best_i])

    gen = 1
    while gen < params.generations:
        if params.target_fitness is not None and best_fit >= params.target_fitness:
            break
        gen += 1
        order = np.argsort(-fits, kind="stable")
        elites = [pop[i].copy() for i in order[: params.elitism]]
        elite_fits = fits[order[: params.elitism]]
        offspring = []
        for _ in range(params.population - params.elitism):
            i = tournament_select(fits, rng, params.tournament_size)
            j = tournament_select(fits, rng, params.tournament_size)
            if rng.random() < params.crossover_rate:
                child = crossover(pop[i], pop[j])
            else:
                child = pop[i if fits[i] >= fits[j] else j].copy()
            offspring.append(
                mutate(child, params.mutation_rate, params.mutation_sigma, rng)
            )
        new_fits = _check_fits(fitness_fn(offspring), len(offspring))
        evaluations += len(offspring)
        pop = elites + offspring
        fits = np.concatenate([elite_fits, new_fits])
        i = gen_stats(gen)
        if float(fits[i]) > best_fit:
            best_genome, best_fit = pop[i].copy(), float(fits[i])

    return GaResult(best_genome, best_fit, gen, evaluations, history)
