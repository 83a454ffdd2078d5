"""Experiment configuration: JSON schema, validation, bundled presets.

A configuration document is one JSON object. Unknown keys are rejected by
name at every level, as are missing required keys, type mismatches, and
invariant violations, so a typo fails loudly at load time instead of
silently running the wrong experiment.

The package ships seven bundled presets, ``exp1`` .. ``exp7``, covering the
three model families at three optimizer effort tiers, plus small desk-scale
variants used by the fast end-to-end checks.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources

from .agents import AgentConfig, TriggerPolicy
from .federation import ScriptedResourceProvider, StaticResourceProvider
from .ga import GaTier, tier_params
from .ransim import EnvSpec, RanEnv, TrapProfile

MODELS = ("ne_dqn", "ne_a2c", "ne_marl")

_GA_OVERRIDE_KEYS = (
    "generations",
    "population",
    "elitism",
    "mutation_rate",
    "crossover_rate",
    "mutation_sigma",
    "tournament_size",
)


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending key."""


def _kind_of(value):
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    if isinstance(value, dict):
        return "object"
    return "null"


def _check_kind(value, kind, key, where):
    ok = {
        "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "boolean": lambda v: isinstance(v, bool),
        "string": lambda v: isinstance(v, str),
        "array": lambda v: isinstance(v, list),
        "object": lambda v: isinstance(v, dict),
    }[kind]
    if not ok(value):
        raise ConfigError(
            f"key '{key}' in {where}: expected {kind}, got {_kind_of(value)}"
        )
    return value


class _Section:
    """One JSON object level; tracks consumption so leftovers are named."""

    def __init__(self, data, where):
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object, got {_kind_of(data)}")
        self.data = data
        self.where = where
        self._seen = set()

    def take(self, key, kind=None, required=False, default=None):
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required key '{key}' in {self.where}")
            return default
        self._seen.add(key)
        value = self.data[key]
        if kind is not None and value is not None:
            _check_kind(value, kind, key, self.where)
        return value

    def finish(self):
        extra = sorted(set(self.data) - self._seen)
        if extra:
            raise ConfigError(f"unknown key '{extra[0]}' in {self.where}")


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment, ready to hand to the runner."""

    name: str
    model: str
    ne_interval: int
    episodes: int
    seeds: tuple
    ga_enabled: bool
    indication_override: GaTier | None
    scaling_source: object  # float, or tuple of (cpu, mem) pairs
    ga_overrides: dict
    env: EnvSpec
    agent: AgentConfig

    @property
    def n_agents(self) -> int:
        return 2 if self.model == "ne_marl" else 1

    @property
    def algorithm(self) -> str:
        return self.agent.algorithm

    def resource_provider(self):
        if isinstance(self.scaling_source, tuple):
            return ScriptedResourceProvider(self.scaling_source)
        s = float(self.scaling_source)
        return StaticResourceProvider(s, s)


def _parse_env(raw, where="env") -> EnvSpec:
    sec = _Section(raw if raw is not None else {}, where)
    kwargs = {}
    for key, kind in (
        ("cells", "integer"),
        ("ues", "integer"),
        ("bandwidth_hz", "number"),
        ("max_demand_bps", "number"),
        ("episode_steps", "integer"),
        ("cqi_walk_prob", "number"),
    ):
        value = sec.take(key, kind)
        if value is not None:
            kwargs[key] = float(value) if kind == "number" else value
    rng_pair = sec.take("cqi_init_range", "array")
    if rng_pair is not None:
        kwargs["cqi_init_range"] = tuple(rng_pair)
    per_cell = sec.take("cell_cqi_init_ranges", "array")
    if per_cell is not None:
        kwargs["cell_cqi_init_ranges"] = tuple(tuple(p) for p in per_cell)
    per_demand = sec.take("cell_demand_bps", "array")
    if per_demand is not None:
        kwargs["cell_demand_bps"] = tuple(float(x) for x in per_demand)
    trap = sec.take("trap", "object")
    if trap is not None:
        tsec = _Section(trap, f"{where}.trap")
        tkw = {}
        pen = tsec.take("handover_penalty", "number")
        if pen is not None:
            tkw["handover_penalty"] = float(pen)
        dur = tsec.take("penalty_duration", "integer")
        if dur is not None:
            tkw["penalty_duration"] = dur
        tsec.finish()
        kwargs["trap"] = TrapProfile(**tkw)
    sec.finish()
    try:
        return EnvSpec(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def _parse_trigger(raw, where="agent.trigger") -> TriggerPolicy:
    sec = _Section(raw, where)
    mode = sec.take("mode", "string", required=True)
    threshold = float(sec.take("threshold", "number", default=0.0))
    min_improvement = float(sec.take("min_improvement", "number", default=0.0))
    warmup = int(sec.take("warmup_episodes", "integer", default=0))
    sec.finish()
    try:
        return TriggerPolicy(
            mode,
            threshold=threshold,
            min_improvement=min_improvement,
            warmup_episodes=warmup,
        )
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def _parse_scaling(raw):
    if raw is None:
        return 1.0
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        s = float(raw)
        if not 0.0 <= s <= 1.0:
            raise ConfigError("key 'scaling_source': static factor must be in [0, 1]")
        return s
    if isinstance(raw, list):
        if not raw:
            raise ConfigError("key 'scaling_source': script needs at least one entry")
        pairs = []
        for i, item in enumerate(raw):
            if not (isinstance(item, list) and len(item) == 2):
                raise ConfigError(
                    f"key 'scaling_source': entry {i} must be a [cpu, mem] pair"
                )
            cpu, mem = (float(x) for x in item)
            if not (0.0 <= cpu <= 1.0 and 0.0 <= mem <= 1.0):
                raise ConfigError(
                    f"key 'scaling_source': entry {i} fractions must be in [0, 1]"
                )
            pairs.append((cpu, mem))
        return tuple(pairs)
    raise ConfigError("key 'scaling_source': expected a number or an array of pairs")


def _parse_ga_overrides(raw, where="ga_overrides") -> dict:
    if raw is None:
        return {}
    sec = _Section(raw, where)
    out = {}
    for key in _GA_OVERRIDE_KEYS:
        value = sec.take(key, "number")
        if value is not None:
            out[key] = value
    sec.finish()
    try:
        dataclasses.replace(tier_params(GaTier.LOW), **out)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e
    return out


def parse_config(document: dict, origin: str = "config") -> ExperimentConfig:
    sec = _Section(document, origin)
    name = sec.take("name", "string", required=True)
    model = sec.take("model", "string", required=True)
    if model not in MODELS:
        raise ConfigError(f"key 'model': '{model}' is not one of {', '.join(MODELS)}")
    ne_interval = sec.take("ne_interval", "integer", required=True)
    episodes = sec.take("episodes", "integer", required=True)
    raw_seeds = sec.take("seeds", "array", required=True)
    if not raw_seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in raw_seeds
    ):
        raise ConfigError("key 'seeds': expected a nonempty array of integers")
    ga_enabled = sec.take("ga_enabled", "boolean", default=True)
    raw_override = sec.take("indication_override", "string")
    indication_override = None
    if raw_override is not None:
        try:
            indication_override = GaTier(raw_override)
        except ValueError:
            raise ConfigError(
                f"key 'indication_override': '{raw_override}' is not a tier"
            ) from None
    scaling_source = _parse_scaling(sec.take("scaling_source"))
    ga_overrides = _parse_ga_overrides(sec.take("ga_overrides", "object"))
    env = _parse_env(sec.take("env", "object"))
    raw_agent = sec.take("agent", "object")
    sec.finish()

    if ne_interval < 1:
        raise ConfigError("key 'ne_interval': must be >= 1")
    if episodes < ne_interval:
        raise ConfigError("key 'episodes': must be >= ne_interval")
    n_agents = 2 if model == "ne_marl" else 1
    if model == "ne_marl" and env.cells != 2:
        raise ConfigError("key 'cells': model ne_marl requires exactly 2 cells")
    if n_agents != 1 and env.cells != n_agents:
        raise ConfigError("key 'cells': cell count must match the agent count")

    asec = _Section(raw_agent if raw_agent is not None else {}, "agent")
    akw = {}
    for key, kind in (
        ("hidden", "integer"),
        ("lr", "number"),
        ("gamma", "number"),
        ("epsilon_start", "number"),
        ("epsilon_end", "number"),
        ("epsilon_decay_episodes", "integer"),
        ("buffer_capacity", "integer"),
        ("batch_size", "integer"),
        ("target_sync_every", "integer"),
        ("target_return", "number"),
        ("reward_scale", "number"),
    ):
        value = asec.take(key, kind)
        if value is not None:
            akw[key] = float(value) if kind == "number" else value
    raw_trigger = asec.take("trigger", "object")
    raw_algorithm = asec.take("algorithm", "string")
    asec.finish()
    if "epsilon_decay_episodes" not in akw:
        akw["epsilon_decay_episodes"] = max(1, round(0.3 * episodes))
    if raw_trigger is not None:
        akw["trigger"] = _parse_trigger(raw_trigger)

    probe = RanEnv(env, n_agents)
    algorithm = "a2c" if model == "ne_a2c" else "dqn"
    if raw_algorithm is not None:
        # the learner behind ne_marl is a free choice; the single-agent
        # models are the algorithm they are named after
        if model != "ne_marl":
            raise ConfigError("agent.algorithm: only ne_marl accepts an override")
        if raw_algorithm not in ("dqn", "a2c"):
            raise ConfigError(f"agent.algorithm: unknown algorithm {raw_algorithm!r}")
        algorithm = raw_algorithm
    try:
        agent = AgentConfig(
            algorithm=algorithm,
            obs_size=probe.obs_size,
            n_actions=probe.n_actions,
            ne_interval=ne_interval,
            indication_override=indication_override,
            **akw,
        )
    except ValueError as e:
        raise ConfigError(f"agent: {e}") from e

    return ExperimentConfig(
        name=name,
        model=model,
        ne_interval=ne_interval,
        episodes=episodes,
        seeds=tuple(raw_seeds),
        ga_enabled=bool(ga_enabled),
        indication_override=indication_override,
        scaling_source=scaling_source,
        ga_overrides=ga_overrides,
        env=env,
        agent=agent,
    )


def load_config(path) -> ExperimentConfig:
    """Load and validate one experiment configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config '{path}': {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config '{path}' is not valid JSON: {e}") from e
    return parse_config(document, origin=str(path))


def bundled_names() -> tuple:
    """Names of the configuration presets shipped with the package."""
    root = resources.files(__package__) / "configs"
    return tuple(sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json")))


def load_bundled(name: str) -> ExperimentConfig:
    """Load a shipped preset by name, e.g. ``exp3`` or ``desk_dqn``."""
    res = resources.files(__package__) / "configs" / f"{name}.json"
    if not res.is_file():
        raise ConfigError(
            f"no bundled config named '{name}' (have: {', '.join(bundled_names())})"
        )
    document = json.loads(res.read_text(encoding="utf-8"))
    return parse_config(document, origin=f"bundled:{name}")
