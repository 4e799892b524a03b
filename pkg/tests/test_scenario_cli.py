from __future__ import annotations

import json
from pathlib import Path

import pytest

from sovereign_edge.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main
from sovereign_edge.scenario import (
    ParseError,
    ValidationError,
    bundled_scenarios,
    build_scenario,
    load_scenario,
    parse_scenario,
)

BUNDLED = bundled_scenarios()
BASELINE = BUNDLED["sovereign_baseline"]
EXPECT = BASELINE.with_name("sovereign_baseline.expect.toml")


@pytest.fixture(scope="module")
def baseline_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("baseline")
    assert main(["run", "--scenario", "sovereign_baseline", "--out", str(out), "--quiet"]) == EXIT_OK
    return out


def test_bundled_names():
    assert set(BUNDLED) == {"sovereign_baseline", "connected_baseline", "managed_ip_policy_broken"}
    for path in BUNDLED.values():
        assert load_scenario(path).name == path.stem


def test_parse_error_has_location(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[scenario]\nname = "x"\nseed = = 3\n')
    with pytest.raises(ParseError) as err:
        load_scenario(bad)
    assert (err.value.line, err.value.column) == (3, 8)
    assert main(["run", "--scenario", str(bad)]) == EXIT_USAGE
    assert f"{bad}:3:8" in capsys.readouterr().err


@pytest.mark.parametrize("patch, field", [
    (("loss_rate = 0.01", "loss_rate = 1.5"), "channel.loss_rate"),
    (("terminals = 6", "terminals = 0"), "fleet.terminals"),
    (("kind = \"SatelliteBroadcast\"", "kind = \"Carrier pigeon\""), "channel.kind"),
    (("seed = 20240601", "seed = \"abc\""), "scenario.seed"),
    (("[graph]", "[graph]\ncolour = 1"), "graph.colour"),
    (("[sessions]", "[bogus]\n[sessions]"), "bogus"),
])
def test_validation_names_the_field(patch, field):
    text = BASELINE.read_text().replace(*patch)
    with pytest.raises(ValidationError) as err:
        build_scenario(parse_scenario(text, "x.toml"))
    assert err.value.field == field


def test_missing_file_is_usage_error(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "nope.toml")]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["run", "--scenario", "sovereign_baseline", "--trials", "0"]) == EXIT_USAGE


def test_baseline_outputs(baseline_run):
    names = {p.name for p in baseline_run.iterdir()}
    assert names == {"report.txt", "report.jsonl", "trace.jsonl", "telemetry.jsonl"}
    records = [json.loads(line) for line in (baseline_run / "report.jsonl").read_text().splitlines()]
    assert records[0]["record"] == "header" and records[-1] == {
        "record": "summary", "passed": True, "failed_checks": []}
    assert "result: PASS" in (baseline_run / "report.txt").read_text()


def test_run_is_byte_deterministic(baseline_run, tmp_path):
    assert main(["run", "--scenario", "sovereign_baseline", "--out", str(tmp_path), "--quiet"]) == 0
    for name in ("report.txt", "report.jsonl", "trace.jsonl", "telemetry.jsonl"):
        assert (tmp_path / name).read_bytes() == (baseline_run / name).read_bytes()


def test_verify_against_bundled_expectations(baseline_run, capsys):
    assert main(["verify", str(baseline_run / "report.jsonl"), str(EXPECT)]) == EXIT_OK
    assert "verify: pass" in capsys.readouterr().out


def test_verify_holds_across_seeds(tmp_path):
    for seed in (1, 77):
        out = tmp_path / str(seed)
        assert main(["run", "--scenario", "sovereign_baseline", "--seed-override", str(seed),
                     "--out", str(out), "--quiet"]) == EXIT_OK
        assert main(["verify", str(out / "report.jsonl"), str(EXPECT)]) == EXIT_OK


def test_verify_flags_a_doubled_cycle(tmp_path, capsys):
    slow = tmp_path / "sovereign_baseline.toml"
    slow.write_text(BASELINE.read_text().replace("cycle_period_s = 300", "cycle_period_s = 600"))
    out = tmp_path / "out"
    main(["run", "--scenario", str(slow), "--out", str(out), "--quiet"])
    assert main(["verify", str(out / "report.jsonl"), str(EXPECT)]) == EXIT_CHECK_FAILED
    assert "DIFF measurements.revocation_latency_max_s" in capsys.readouterr().out


def test_expect_round_trip(baseline_run, tmp_path):
    exp = tmp_path / "exp.toml"
    assert main(["expect", str(baseline_run / "report.jsonl"), "--out", str(exp)]) == EXIT_OK
    assert main(["verify", str(baseline_run / "report.jsonl"), str(exp)]) == EXIT_OK


def test_verify_rejects_foreign_files(baseline_run, tmp_path):
    junk = tmp_path / "junk.jsonl"
    junk.write_text('{"record": "header", "schema": "other/9"}\n')
    assert main(["verify", str(junk), str(EXPECT)]) == EXIT_USAGE
    assert main(["verify", str(baseline_run / "report.jsonl"), str(BASELINE)]) == EXIT_USAGE


@pytest.mark.parametrize("name", ["connected_baseline", "managed_ip_policy_broken"])
def test_other_bundled_scenarios_meet_their_expectations(name, tmp_path):
    assert main(["run", "--scenario", name, "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    expect = BUNDLED[name].with_name(f"{name}.expect.toml")
    if expect.exists():
        assert main(["verify", str(tmp_path / "report.jsonl"), str(expect)]) == EXIT_OK


def test_checks_only_skips_simulation(tmp_path):
    assert main(["run", "--scenario", "sovereign_baseline", "--checks-only",
                 "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    assert not (tmp_path / "trace.jsonl").exists()


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    assert "sovereign_baseline" in capsys.readouterr().out
