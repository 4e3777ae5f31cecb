import pytest

from cig.config import ConfigError, load_config, parse_config

EXAMPLE = """
[experiment]
name = "demo"
methods = ["cig", "cig_no_trace"]
seeds = [0, 1]
budget_steps = 2000
stop_at_coverage = 1.0

[[env]]
name = "short"
kind = "chain"
size = 10

[[env]]
kind = "corridor"
size = 12
noisy_tv = true

[ensemble]
members = 4

[overrides.cig_no_trace.ensemble]
members = 2
"""


def test_example_file_expands_matrix(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(EXAMPLE)
    cfg = load_config(path)
    runs = cfg.runs()
    assert len(runs) == 2 * 2 * 2
    assert [r.env_name for r in runs[:4]] == ["short", "short", "corridor_noisy", "corridor_noisy"]
    assert runs[0].run_id == "cig__short__seed0"
    assert {r.ensemble.members for r in runs if r.method == "cig"} == {4}
    assert {r.ensemble.members for r in runs if r.method == "cig_no_trace"} == {2}
    assert all(r.budget_steps == 2000 and r.stop_at_coverage == 1.0 for r in runs)


def test_defaults():
    run = parse_config({}).runs()[0]
    assert (run.ensemble.members, run.planner.horizon, run.planner.gamma) == (5, 15, 0.99)
    assert (run.reward.ridge_multiplier, run.reward.beta_sigma, run.reward.norm_momentum) == (1.0, 0.99, 0.99)


@pytest.mark.parametrize(
    "data,field",
    [
        ({"experiment": {"methods": ["icm"]}}, "experiment.methods"),
        ({"experiment": {"budgetsteps": 5}}, "budgetsteps"),
        ({"ensemble": {"members": 1}}, "ensemble.members"),
        ({"planner": {"horizon": 0}}, "planner.horizon"),
        ({"env": {"kind": "maze"}}, "env.kind"),
        ({"overrides": {"cig": {"ensemble": {"M": 3}}}}, "overrides.cig.ensemble"),
        ({"experiment": {"prefill_steps": 0}}, "prefill_steps"),
        ({"experiment": {"stop_at_coverage": 1.5}}, "stop_at_coverage"),
        ({"bogus": {}}, "bogus"),
    ],
)
def test_invalid_fields_are_named(data, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(data)


def test_duplicate_env_names_rejected():
    with pytest.raises(ConfigError, match="unique"):
        parse_config({"env": [{"kind": "chain"}, {"kind": "chain"}]})


def test_bad_toml_is_config_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[experiment\n")
    with pytest.raises(ConfigError):
        load_config(path)
