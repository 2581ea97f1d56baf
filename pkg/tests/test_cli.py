import numpy as np
import pytest

from stochlab.cli import main, parse_config, run
from stochlab.errors import ConfigurationError

SMALL_CONFIG = """\
[isometry]
seed = 7
samples = 4000
time_steps = 128
identity_paths = 100

[mollifier]
seed = 7
samples = 20
time_steps = 512

[counterexample]
seed = 7
samples = 4000
time_steps = 256
sine_n_ladder = 4, 16
spike_n_ladder = 4
tolerance = 0.06

[theorem21]
seed = 7
samples = 2000
time_steps = 128
decomposition_samples = 500

[l1mode]
seed = 7
samples = 1500
time_steps = 128
cells = 32

[corollary42]
seed = 7
samples = 2000
time_steps = 128

[translate]
seed = 7
samples = 96
cells = 32
time_steps = 1024
n_ladder = 32, 64

[transport]
seed = 7
samples = 16
cells = 32
horizon = 0.1
snapshots = 8

[claw]
seed = 7
samples = 24
cells = 32
horizon = 0.1
refine = 2
det_cells = 32, 64
shock_horizon = 0.2
"""


def test_parse_minimal_config():
    plan = parse_config("[counterexample]\nseed = 3\nsamples = 100\n")
    assert set(plan) == {"counterexample"}
    assert plan["counterexample"]["seed"] == 3
    assert plan["counterexample"]["which"] == "both"


def test_parse_lag_ladder_fractions():
    plan = parse_config(
        "[translate]\nseed = 1\nsamples = 10\nh_ladder = 1/256, 1/128, 1/64, 1/32\n")
    assert plan["translate"]["h_ladder"] == [1 / 256, 1 / 128, 1 / 64, 1 / 32]


def test_unknown_key_lists_accepted_set():
    with pytest.raises(ConfigurationError, match="accepted"):
        parse_config("[isometry]\nseed = 1\nsamples = 10\nbogus = 2\n")


def test_unknown_section_rejected():
    with pytest.raises(ConfigurationError, match="unknown section"):
        parse_config("[nonsense]\nseed = 1\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigurationError, match="duplicate"):
        parse_config("[isometry]\nseed = 1\nseed = 2\nsamples = 10\n")


def test_missing_required_key_names_defaults():
    with pytest.raises(ConfigurationError, match="missing required key 'seed'"):
        parse_config("[isometry]\nsamples = 10\n")


def test_negative_samples_rejected_with_key_name():
    with pytest.raises(ConfigurationError, match="samples"):
        parse_config("[isometry]\nseed = 1\nsamples = -5\n")


def test_run_unknown_subcommand(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[isometry]\nseed = 1\nsamples = 200\ntime_steps = 32\n")
    with pytest.raises(ConfigurationError):
        run(str(cfg), "bogus", str(tmp_path / "out"))


def test_run_missing_section(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[isometry]\nseed = 1\nsamples = 200\n")
    with pytest.raises(ConfigurationError, match="no \\[transport\\] section"):
        run(str(cfg), "transport", str(tmp_path / "out"))


def test_empty_experiment_list_writes_header_only(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nexperiments =\n")
    out = tmp_path / "out"
    status = run(str(cfg), "all", str(out))
    assert status == 0
    content = (out / "all.csv").read_text()
    assert content.splitlines() == [
        "experiment,n,rho,h,statistic,value,stderr,samples,seed,verdict"]


def test_counterexample_subcommand_rows(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[counterexample]\nseed = 7\nsamples = 5000\ntime_steps = 256\n"
                   "sine_n_ladder = 4\nspike_n_ladder = 4\ntolerance = 0.06\n")
    out = tmp_path / "out"
    status = run(str(cfg), "counterexample", str(out))
    assert status == 0
    lines = (out / "counterexample.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header == ["experiment", "n", "rho", "h", "statistic", "value",
                      "stderr", "samples", "seed", "verdict"]
    moment_rows = [l for l in lines if ",second_moment," in l]
    assert len(moment_rows) == 1
    val = float(moment_rows[0].split(",")[5])
    assert abs(val - 0.25) < 0.25 * 0.06
    # every row carries experiment, statistic, value, seed: full provenance
    for line in lines[1:]:
        parts = line.split(",")
        assert parts[0] == "counterexample" and parts[4] and parts[5] and parts[8]


def test_seed_override_changes_values(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[isometry]\nseed = 5\nsamples = 500\ntime_steps = 64\n"
                   "identity_paths = 10\n")
    out1, out2, out3 = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(str(cfg), "isometry", str(out1)) == 0
    assert run(str(cfg), "isometry", str(out2)) == 0
    assert run(str(cfg), "isometry", str(out3), seed_override=99) == 0
    a = (out1 / "isometry.csv").read_bytes()
    b = (out2 / "isometry.csv").read_bytes()
    c = (out3 / "isometry.csv").read_bytes()
    assert a == b
    assert a != c


def test_full_run_all_is_byte_deterministic_across_worker_counts(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL_CONFIG)
    outs = []
    for name, workers in (("w1", 1), ("w2", 2), ("w1b", 1)):
        out = tmp_path / name
        status = run(str(cfg), "all", str(out), workers=workers)
        assert status == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    assert outs[0] == outs[1] == outs[2]
    assert "all.csv" in outs[0] and "claw.csv" in outs[0]


def test_main_entrypoint(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[mollifier]\nseed = 3\nsamples = 5\ntime_steps = 256\n")
    status = main(["mollifier", "--config", str(cfg), "--out", str(tmp_path / "o"),
                   "--workers", "1"])
    assert status == 0


def test_main_reports_config_errors(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[isometry]\nsamples = 10\n")  # seed missing
    status = main(["isometry", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert status == 2
