import json

import pytest

from mgnav import cli
from mgnav.config import ConfigError, RunConfig, defaults_table, load_config, override, to_ini


def _ini(tmp_path, text):
    p = tmp_path / "cfg.ini"
    p.write_text(text)
    return p


def test_defaults_roundtrip(tmp_path):
    cfg = load_config(_ini(tmp_path, to_ini(RunConfig())))
    assert cfg == RunConfig()
    keys = {(s, k) for s, k, _ in defaults_table()}
    assert ("graph", "d") in keys and ("loop", "t_global") in keys and ("run", "output_dir") in keys


def test_partial_config_overlays_defaults(tmp_path):
    cfg = load_config(_ini(tmp_path, "[graph]\nd = 2.0\nr = 1.0\n[policy]\nstep_lengths = 0.1, 0.2\n"))
    assert (cfg.graph.d, cfg.graph.r) == (2.0, 1.0)
    assert cfg.policy.step_lengths == (0.1, 0.2)
    assert cfg.loop == RunConfig().loop


@pytest.mark.parametrize("text, needle", [
    ("[bogus]\nx = 1\n", "bogus"),
    ("[graph]\nspacing = 1\n", "spacing"),
    ("[graph]\nd = wide\n", "d"),
    ("[graph]\nr = 3.0\n", "[graph]"),
    ("[loop]\nretrieval_mode = vibes\n", "[loop]"),
    ("not an ini", "cfg.ini"),
])
def test_bad_config_names_the_problem(tmp_path, text, needle):
    with pytest.raises(ConfigError, match=None) as info:
        load_config(_ini(tmp_path, text))
    assert needle in str(info.value)


def test_override_and_suite_config():
    cfg = override(RunConfig(), "run", seed=4)
    cfg = override(cfg, "suite", n_scenes=2, episodes_per_scene=None)
    sc = cfg.suite_config()
    assert sc.scene_seeds == (4, 5) and sc.tour_seed == 4 and sc.episodes_per_scene == 5
    with pytest.raises(ConfigError):
        override(cfg, "graph", spacing=1.0)
    with pytest.raises(ConfigError):
        override(cfg, "graph", d=-1.0)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


# --------------------------------------------------------------------------
# command line


def test_no_subcommand_is_usage_error(capsys):
    assert cli.main([]) == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["build-graph", "--d", "wide"])
    assert e.value.code == 1


def test_print_defaults(capsys):
    assert cli.main(["--print-defaults"]) == 0
    assert "[graph] d = 1.0" in capsys.readouterr().out


def test_unknown_config_key_exit_1(tmp_path, capsys):
    cfg = _ini(tmp_path, "[graph]\nspacing = 1\n")
    assert cli.main(["build-graph", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 1
    assert "spacing" in capsys.readouterr().err


def test_build_and_dump_graph(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env-out"))
    assert cli.main(["build-graph", "--seed", "3", "--d", "2.0", "--r", "1.0"]) == 0
    out = tmp_path / "env-out"
    graph = out / "graph-s3.json"
    assert graph.is_file() and (out / "config.ini").is_file()
    assert "d = 2.0" in (out / "config.ini").read_text()
    capsys.readouterr()
    assert cli.main(["dump-graph", str(graph)]) == 0
    report = capsys.readouterr().out
    assert "min pairwise center distance" in report
    # the flag beats the environment variable
    flag_out = tmp_path / "flag-out"
    assert cli.main(["build-graph", "--seed", "3", "--d", "2.0", "--r", "1.0",
                     "--output-dir", str(flag_out)]) == 0
    assert (flag_out / "graph-s3.json").is_file()


def test_dump_graph_errors(tmp_path, capsys):
    assert cli.main(["dump-graph", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "other"}))
    assert cli.main(["dump-graph", str(bad)]) == 2


def test_inject_obstacles(tmp_path, capsys):
    assert cli.main(["inject-obstacles", "--seed", "3", "--count", "3", "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "scene-s3-obs3.json").is_file()
    assert cli.main(["inject-obstacles", "--count", "-1", "--output-dir", str(tmp_path)]) == 1
    assert cli.main(["inject-obstacles", "--keep", "1;2", "--output-dir", str(tmp_path)]) == 1


def test_run_episode_and_benchmark(tmp_path, capsys):
    assert cli.main(["run-episode", "--seed", "3", "--variant", "graph", "--output-dir", str(tmp_path)]) == 0
    doc = json.loads(next(tmp_path.glob("episode-*.json")).read_text())
    assert doc["variant"] == "graph" and len(doc["trajectory"]) == doc["steps"] + 1
    assert cli.main(["run-episode", "--variant", "nope", "--output-dir", str(tmp_path)]) == 1
    assert cli.main(["run-benchmark", "--preset", "nope", "--output-dir", str(tmp_path)]) == 1
    assert cli.main(["run-benchmark", "--preset", "retrieval", "--scenes", "1", "--episodes", "1",
                     "--workers", "1", "--output-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "results.jsonl").read_text().splitlines()
    assert [json.loads(x)["variant"] for x in lines] == ["keyframe", "object", "hybrid"]
    assert (tmp_path / "summary.txt").is_file() and (tmp_path / "summary.json").is_file()
