"""Config loading: strict validation and bundled preset fidelity."""

import dataclasses
import json

import pytest

from ranevo.config import (
    ConfigError,
    bundled_names,
    load_bundled,
    load_config,
    parse_config,
)
from ranevo.federation import ScriptedResourceProvider, StaticResourceProvider
from ranevo.ga import GaTier, tier_params


def minimal(**extra):
    doc = {
        "name": "t",
        "model": "ne_dqn",
        "ne_interval": 10,
        "episodes": 50,
        "seeds": [0],
    }
    doc.update(extra)
    return doc


# -- strictness -----------------------------------------------------------


def test_minimal_document_loads_with_defaults():
    cfg = parse_config(minimal())
    assert cfg.n_agents == 1 and cfg.algorithm == "dqn"
    assert cfg.ga_enabled is True
    assert cfg.indication_override is None
    assert cfg.scaling_source == 1.0
    assert cfg.env.ues == 13 and cfg.env.cells == 1
    assert cfg.agent.obs_size == 40 and cfg.agent.n_actions == 39
    assert cfg.agent.ne_interval == 10


def test_missing_required_key_is_named():
    doc = minimal()
    del doc["episodes"]
    with pytest.raises(ConfigError, match="'episodes'"):
        parse_config(doc)


def test_unknown_top_level_key_is_named():
    with pytest.raises(ConfigError, match="'colour'"):
        parse_config(minimal(colour="red"))


def test_unknown_nested_keys_are_named():
    with pytest.raises(ConfigError, match="'uess'"):
        parse_config(minimal(env={"uess": 13}))
    with pytest.raises(ConfigError, match="'learning_rate'"):
        parse_config(minimal(agent={"learning_rate": 0.1}))
    with pytest.raises(ConfigError, match="'severity'"):
        parse_config(minimal(env={"trap": {"severity": 2}}))


def test_type_mismatch_is_named():
    with pytest.raises(ConfigError, match="'episodes'.*integer"):
        parse_config(minimal(episodes="many"))
    with pytest.raises(ConfigError, match="'seeds'"):
        parse_config(minimal(seeds=[0.5]))
    with pytest.raises(ConfigError, match="'seeds'"):
        parse_config(minimal(seeds=[]))


def test_gamma_out_of_range_rejected():
    with pytest.raises(ConfigError, match="gamma"):
        parse_config(minimal(agent={"gamma": 1.5}))


def test_bad_model_and_tier_rejected():
    with pytest.raises(ConfigError, match="'model'"):
        parse_config(minimal(model="ppo"))
    with pytest.raises(ConfigError, match="'indication_override'"):
        parse_config(minimal(indication_override="extreme"))


def test_marl_requires_two_cells():
    with pytest.raises(ConfigError, match="'cells'"):
        parse_config(minimal(model="ne_marl"))
    cfg = parse_config(minimal(model="ne_marl", env={"cells": 2, "ues": 4}))
    assert cfg.n_agents == 2


def test_episodes_must_cover_one_window():
    with pytest.raises(ConfigError, match="'episodes'"):
        parse_config(minimal(episodes=5, ne_interval=10))


def test_scaling_source_number_and_script():
    cfg = parse_config(minimal(scaling_source=0.5))
    assert isinstance(cfg.resource_provider(), StaticResourceProvider)
    assert cfg.resource_provider().sample().cpu_available_fraction == 0.5

    cfg = parse_config(minimal(scaling_source=[[0.5, 0.9], [1.0, 1.0]]))
    provider = cfg.resource_provider()
    assert isinstance(provider, ScriptedResourceProvider)
    assert provider.sample().cpu_available_fraction == 0.5
    with pytest.raises(ConfigError, match="'scaling_source'"):
        parse_config(minimal(scaling_source=1.5))
    with pytest.raises(ConfigError, match="'scaling_source'"):
        parse_config(minimal(scaling_source=[[0.5]]))


def test_ga_overrides_checked_against_real_params():
    cfg = parse_config(minimal(ga_overrides={"generations": 500}))
    assert cfg.ga_overrides == {"generations": 500}
    with pytest.raises(ConfigError, match="'popsize'"):
        parse_config(minimal(ga_overrides={"popsize": 9}))
    with pytest.raises(ConfigError, match="ga_overrides"):
        parse_config(minimal(ga_overrides={"mutation_rate": 2.0}))


def test_trap_profile_parsed():
    cfg = parse_config(
        minimal(env={"trap": {"handover_penalty": 250.0, "penalty_duration": 2}})
    )
    assert cfg.env.trap.handover_penalty == 250.0
    assert cfg.env.trap.penalty_duration == 2
    assert parse_config(minimal()).env.trap is None


def test_epsilon_decay_defaults_to_a_third_of_the_run():
    assert parse_config(minimal(episodes=50)).agent.epsilon_decay_episodes == 15
    doc = minimal(episodes=50, agent={"epsilon_decay_episodes": 7})
    assert parse_config(doc).agent.epsilon_decay_episodes == 7


def test_trigger_warmup_parsed_and_checked():
    doc = minimal(
        agent={
            "trigger": {
                "mode": "threshold",
                "threshold": 500.0,
                "warmup_episodes": 24,
            }
        }
    )
    assert parse_config(doc).agent.trigger.warmup_episodes == 24
    assert parse_config(minimal()).agent.trigger.warmup_episodes == 0
    bad = minimal(agent={"trigger": {"mode": "threshold", "warmup_episodes": -1}})
    with pytest.raises(ConfigError, match="warmup_episodes"):
        parse_config(bad)


def test_marl_learner_is_configurable():
    marl = {"model": "ne_marl", "env": {"cells": 2, "ues": 4}}
    assert parse_config(minimal(**marl)).algorithm == "dqn"
    doc = minimal(**marl)
    doc["agent"] = {"algorithm": "a2c"}
    assert parse_config(doc).algorithm == "a2c"
    doc["agent"] = {"algorithm": "ppo"}
    with pytest.raises(ConfigError, match="algorithm"):
        parse_config(doc)
    single = minimal(agent={"algorithm": "a2c"})
    with pytest.raises(ConfigError, match="ne_marl"):
        parse_config(single)


def test_load_config_from_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(minimal()))
    assert load_config(path).name == "t"
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")


# -- bundled presets ------------------------------------------------------

TABLE = {
    "exp1": ("ne_dqn", GaTier.LOW, 50, 40, 1, 0.01, 0.3, 0.005, 0.95, 1000),
    "exp2": ("ne_dqn", GaTier.MEDIUM, 100, 70, 2, 0.1, 0.5, 0.005, 0.95, 1000),
    "exp3": ("ne_dqn", GaTier.HIGH, 300, 125, 5, 0.2, 0.8, 0.005, 0.95, 1000),
    "exp4": ("ne_a2c", GaTier.LOW, 50, 40, 1, 0.01, 0.3, 0.001, 0.99, 1000),
    "exp5": ("ne_a2c", GaTier.MEDIUM, 100, 70, 2, 0.1, 0.5, 0.005, 0.99, 1000),
    "exp6": ("ne_a2c", GaTier.HIGH, 300, 125, 5, 0.2, 0.8, 0.001, 0.99, 1000),
    "exp7": ("ne_marl", GaTier.HIGH, 500, 125, 5, 0.2, 0.8, 0.001, 0.99, 1500),
}


def test_all_seven_presets_ship():
    names = bundled_names()
    for k in TABLE:
        assert k in names


@pytest.mark.parametrize("name", sorted(TABLE))
def test_bundled_preset_values(name):
    model, tier, gens, pop, elit, mut, cross, lr, gamma, episodes = TABLE[name]
    cfg = load_bundled(name)
    assert cfg.model == model
    assert cfg.indication_override == tier
    assert cfg.ne_interval == 125
    assert cfg.scaling_source == 1.0
    params = dataclasses.replace(tier_params(tier), **cfg.ga_overrides)
    assert params.generations == gens
    assert params.population == pop
    assert params.elitism == elit
    assert params.mutation_rate == mut
    assert params.crossover_rate == cross
    assert cfg.agent.lr == lr
    assert cfg.agent.gamma == gamma
    assert cfg.env.max_demand_bps == 1_000_000.0
    assert cfg.env.bandwidth_hz == 10_000_000.0
    assert cfg.episodes == episodes
    assert cfg.ga_enabled is True


def test_exp7_is_two_agent():
    cfg = load_bundled("exp7")
    assert cfg.n_agents == 2 and cfg.env.cells == 2
    assert cfg.agent.obs_size == 85 and cfg.agent.n_actions == 112
    assert cfg.ga_overrides == {"generations": 500}


DESK = {
    "desk_dqn": ("ne_dqn", "dqn", 880.0, "stagnation"),
    "desk_a2c": ("ne_a2c", "a2c", 700.0, "stagnation"),
    "desk_marl": ("ne_marl", "a2c", 780.0, "threshold"),
}


@pytest.mark.parametrize("name", sorted(DESK))
def test_desk_presets_scale_down_tenfold(name):
    model, algorithm, target, mode = DESK[name]
    cfg = load_bundled(name)
    assert cfg.model == model
    assert cfg.algorithm == algorithm
    assert cfg.ne_interval == 12 and cfg.episodes == 100
    assert cfg.scaling_source == 0.1
    assert cfg.indication_override is GaTier.HIGH
    assert cfg.agent.target_return == target
    assert cfg.agent.trigger.mode == mode
    assert cfg.env.trap is not None
    assert cfg.ga_overrides == {"mutation_sigma": 0.2}
    assert len(cfg.seeds) == 10


def test_unknown_bundle_lists_choices():
    with pytest.raises(ConfigError, match="exp1"):
        load_bundled("exp99")
