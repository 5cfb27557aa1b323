import json
import math

import numpy as np
import pytest

from crtprune.cli import main
from crtprune.config import (
    Config,
    EXPERIMENT_IDS,
    default_config,
    load_config,
    parse_config,
)
from crtprune.errors import ConfigError, DomainError
from crtprune.experiments import Report, run_experiment, run_suite
from crtprune.galton_watson import offspring_law, offspring_probability
from crtprune.mechanism import Mechanism
from crtprune.stattests import (
    chi2_two_sample,
    ks_two_sample,
    ks_uniform,
    mean_with_se,
)

STABLE = Mechanism(stable_c=1.0, stable_gamma=1.5)
QUAD = Mechanism(beta=1.0)


# ---------------------------------------------------------------- config

def test_default_config_values():
    cfg = default_config()
    assert cfg.mechanism == Mechanism(beta=1.0)
    assert cfg.lam == 1.0
    assert cfg.theta == 1.0
    assert cfg.q == 0.5
    assert cfg.replicates == 1000
    assert cfg.caps.max_nodes == 1 << 20
    assert cfg.caps.max_depth is None
    assert cfg.tolerances.root_find == 1e-12
    assert cfg.tolerances.fixed_point == 1e-14
    assert cfg.tolerances.tail == 1e-12
    assert cfg.seed == 987654321
    assert cfg.experiment == "all"


def test_parse_config_full_file():
    cfg = parse_config("""
# stable mechanism with one atom
mechanism.alpha = 0.5
mechanism.stable_c = 1.0
mechanism.stable_gamma = 1.5
mechanism.atoms = [[2.0, 0.25]]
lambda = 2.0          # trailing comment
theta = 0.75
q = 0.25
replicates = 50
caps.max_nodes = 4096
caps.max_depth = 10.0
tolerances.tail = 1e-8
seed = 7
experiment = "E3"
""")
    assert cfg.mechanism.alpha == 0.5
    assert cfg.mechanism.stable_c == 1.0
    assert cfg.mechanism.atoms == ((2.0, 0.25),)
    assert cfg.lam == 2.0
    assert cfg.theta == 0.75
    assert cfg.q == 0.25
    assert cfg.replicates == 50
    assert cfg.caps.max_nodes == 4096
    assert cfg.caps.max_depth == 10.0
    assert cfg.tolerances.tail == 1e-8
    assert cfg.seed == 7
    assert cfg.experiment == "E3"


def test_parse_config_reports_line_numbers():
    with pytest.raises(ConfigError, match="line 3: unknown key 'lamda'"):
        parse_config("\n# ok\nlamda = 1.0\n")
    with pytest.raises(ConfigError, match="line 2: expected key = value"):
        parse_config("seed = 1\njust words\n")
    with pytest.raises(ConfigError, match="line 1: value for 'theta'"):
        parse_config("theta = one half\n")
    with pytest.raises(ConfigError, match="line 2: lambda must be positive"):
        parse_config("seed = 1\nlambda = -2.0\n")
    with pytest.raises(ConfigError, match="line 1: replicates must be an "
                                          "integer"):
        parse_config("replicates = 2.5\n")
    with pytest.raises(ConfigError, match="line 1: seed must be at least 0"):
        parse_config("seed = -4\n")


def test_parse_config_rejects_bool_masquerading_as_number():
    with pytest.raises(ConfigError, match="theta must be a number"):
        parse_config("theta = true\n")
    with pytest.raises(ConfigError, match="replicates must be an integer"):
        parse_config("replicates = false\n")


def test_parse_config_atom_validation():
    with pytest.raises(ConfigError, match="list of \\[rate, mass\\]"):
        parse_config("mechanism.atoms = 3\n")
    with pytest.raises(ConfigError, match="line 2: each atom needs"):
        parse_config("seed = 1\nmechanism.atoms = [[1.0, -2.0]]\n")
    with pytest.raises(ConfigError, match="each atom needs"):
        parse_config("mechanism.atoms = [[1.0]]\n")


def test_parse_config_mechanism_errors_point_at_mechanism_line():
    # invalid parameter combinations surface on the first mechanism.* line
    with pytest.raises(ConfigError, match="line 1: quadratic coefficient"):
        parse_config("mechanism.beta = -1.0\nseed = 3\n")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("seed = 3\nmechanism.stable_gamma = 2.5\n"
                     "mechanism.stable_c = 1.0\n")


def test_parse_config_max_depth_nullable():
    assert parse_config("caps.max_depth = null\n").caps.max_depth is None
    assert parse_config("caps.max_depth = 2.5\n").caps.max_depth == 2.5
    with pytest.raises(ConfigError, match="caps.max_depth"):
        parse_config("caps.max_depth = -1.0\n")


def test_parse_config_experiment_choices():
    assert parse_config('experiment = "E7"\n').experiment == "E7"
    with pytest.raises(ConfigError, match="experiment must be one of"):
        parse_config('experiment = "E9"\n')


def test_load_config_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.cfg")


def test_config_is_frozen():
    cfg = default_config()
    with pytest.raises(AttributeError):
        cfg.lam = 2.0


# ------------------------------------------------------------- stattests

def test_chi2_two_sample_same_law_large_p():
    rng = np.random.default_rng(5)
    x = rng.poisson(3.0, 5000)
    y = rng.poisson(3.0, 5000)
    assert chi2_two_sample(x, y) > 1e-3


def test_chi2_two_sample_detects_shift():
    rng = np.random.default_rng(6)
    x = rng.poisson(3.0, 5000)
    y = rng.poisson(3.6, 5000)
    assert chi2_two_sample(x, y) < 1e-6


def test_chi2_two_sample_rejects_empty():
    with pytest.raises(DomainError):
        chi2_two_sample(np.array([], dtype=np.int64), np.array([1, 2]))


def test_ks_uniform_on_uniform_sample():
    rng = np.random.default_rng(7)
    assert ks_uniform(rng.uniform(-0.5, 0.0, 4000), -0.5, 0.0) > 1e-3
    assert ks_uniform(rng.uniform(-0.5, -0.25, 4000), -0.5, 0.0) < 1e-9


def test_ks_two_sample_basic():
    rng = np.random.default_rng(8)
    a = rng.exponential(1.0, 3000)
    b = rng.exponential(1.0, 3000)
    assert ks_two_sample(a, b) > 1e-3
    assert ks_two_sample(a, b + 0.5) < 1e-9


def test_mean_with_se():
    m, se = mean_with_se([1.0, 2.0, 3.0, 4.0])
    assert m == pytest.approx(2.5)
    assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    with pytest.raises(DomainError):
        mean_with_se([1.0])


# ------------------------------------------- single offspring coefficients

def test_offspring_probability_quadratic():
    assert offspring_probability(QUAD, 1.0, 0) == pytest.approx(0.5, abs=1e-15)
    assert offspring_probability(QUAD, 1.0, 1) == 0.0
    assert offspring_probability(QUAD, 1.0, 2) == pytest.approx(0.5, abs=1e-15)
    assert offspring_probability(QUAD, 1.0, 3) == 0.0


def test_offspring_probability_stable_hand_values():
    # gamma = 3/2 at unit level: eta = 1, psi'(1) = 3/2, and the factorial
    # ratios collapse to 2/3, 1/4, 1/24
    assert offspring_probability(STABLE, 1.0, 0) == pytest.approx(2 / 3,
                                                                  abs=1e-12)
    assert offspring_probability(STABLE, 1.0, 2) == pytest.approx(1 / 4,
                                                                  abs=1e-12)
    assert offspring_probability(STABLE, 1.0, 3) == pytest.approx(1 / 24,
                                                                  abs=1e-12)


def test_offspring_probability_matches_truncated_series():
    law = offspring_law(STABLE, 1.0, tail_tol=1e-6)
    raw = law.probs * (1.0 - law.tail_mass)
    for k, p in zip(law.values.tolist(), raw.tolist()):
        assert offspring_probability(STABLE, 1.0, int(k)) == pytest.approx(
            p, abs=1e-15)


def test_offspring_probability_domain_errors():
    with pytest.raises(DomainError):
        offspring_probability(QUAD, 0.0, 0)
    with pytest.raises(DomainError):
        offspring_probability(QUAD, 1.0, -1)


# ------------------------------------------------------------ experiments

def test_run_experiment_unknown_id():
    with pytest.raises(ConfigError, match="unknown experiment"):
        run_experiment("E9", default_config())


def test_report_as_dict_shape():
    rep = Report(experiment="E1", seed=3, n=0, statistic="x", observed=1.0,
                 reference=1.0, error=None, verdict="pass")
    d = rep.as_dict()
    assert list(d) == ["experiment", "seed", "n", "statistic", "observed",
                       "reference", "error", "verdict", "wall_time_ms"]
    assert d["wall_time_ms"] is None


def test_exact_law_experiment_reports():
    cfg = default_config()
    reports = run_experiment("E1", cfg)
    assert all(r.verdict == "pass" for r in reports)
    by_name = {r.statistic: r for r in reports}
    assert by_name["quad p(0)"].observed == pytest.approx(0.5, abs=1e-12)
    assert by_name["quad detachment point"].observed == pytest.approx(
        -0.5, abs=1e-10)
    assert by_name["super largest zero"].observed == pytest.approx(
        1.0, abs=1e-10)
    assert all(r.seed == cfg.seed for r in reports)


def test_experiment_reports_are_deterministic():
    cfg = default_config()
    one = [r.as_dict() for r in run_experiment("E2", cfg)]
    two = [r.as_dict() for r in run_experiment("E2", cfg)]
    assert json.dumps(one) == json.dumps(two)


def test_run_suite_concatenates_in_order():
    cfg = default_config()
    reports = run_suite(("E1", "E2"), cfg)
    ids = [r.experiment for r in reports]
    assert ids == sorted(ids)
    assert set(ids) == {"E1", "E2"}


def test_run_experiment_seed_override():
    cfg = default_config()
    reports = run_experiment("E2", cfg, seed=12345)
    assert all(r.seed == 12345 for r in reports)


# -------------------------------------------------------------------- cli

def _write(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_cli_law_payload(tmp_path, capsys):
    cfg = _write(tmp_path, "lambda = 1.0\n")
    assert main(["law", "--config", cfg]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["eta"] == pytest.approx(1.0)
    assert payload["edge_rate"] == pytest.approx(2.0)
    assert payload["offspring"]["values"] == [0, 2]


def test_cli_sample_respects_replicates(tmp_path, capsys):
    cfg = _write(tmp_path, "seed = 11\n")
    assert main(["sample", "--config", cfg, "--replicates", "4"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload) == 4
    assert all(isinstance(s, str) and s.endswith(");") for s in payload)


def test_cli_seed_flag_changes_output(tmp_path, capsys):
    cfg = _write(tmp_path, "replicates = 3\n")
    main(["sample", "--config", cfg, "--seed", "1"])
    first = capsys.readouterr().out
    main(["sample", "--config", cfg, "--seed", "1"])
    second = capsys.readouterr().out
    main(["sample", "--config", cfg, "--seed", "2"])
    third = capsys.readouterr().out
    assert first == second
    assert first != third


def test_cli_prune_grow_spine_ascension(tmp_path, capsys):
    cfg = _write(tmp_path, "replicates = 3\nseed = 21\n")
    for command in ("prune", "grow", "spine"):
        assert main([command, "--config", cfg]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload) == 3
    assert main(["ascension", "--config", cfg]) == 0
    times = json.loads(capsys.readouterr().out)
    assert len(times) == 3
    assert all(-0.5 < t < 0.0 for t in times)


def test_cli_out_file(tmp_path):
    cfg = _write(tmp_path, "replicates = 2\n")
    out = tmp_path / "trees.json"
    assert main(["sample", "--config", cfg, "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())) == 2


def test_cli_verify_single_experiment_byte_identical(tmp_path):
    cfg = _write(tmp_path, 'experiment = "E1"\n')
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["verify", "--config", cfg, "--out", str(a)]) == 0
    assert main(["verify", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    reports = json.loads(a.read_text())
    assert all(r["experiment"] == "E1" for r in reports)
    assert all(r["verdict"] == "pass" for r in reports)
    assert all(r["wall_time_ms"] is None for r in reports)


def test_cli_verify_experiment_flag_overrides_config(tmp_path, capsys):
    cfg = _write(tmp_path, 'experiment = "E1"\n')
    assert main(["verify", "--config", cfg, "--experiment", "E2"]) == 0
    reports = json.loads(capsys.readouterr().out)
    assert {r["experiment"] for r in reports} == {"E2"}


def test_cli_verify_exit_one_on_failure(tmp_path, capsys, monkeypatch):
    import crtprune.cli as cli_mod

    def fake_suite(eids, cfg, seed):
        return [Report(experiment="E1", seed=seed, n=0, statistic="x",
                       observed=0.0, reference=1.0, error=None,
                       verdict="fail")]

    monkeypatch.setattr(cli_mod, "run_suite", fake_suite)
    cfg = _write(tmp_path, 'experiment = "E1"\n')
    assert main(["verify", "--config", cfg]) == 1
    capsys.readouterr()


def test_cli_bad_config_exit_two(tmp_path, capsys):
    cfg = _write(tmp_path, "lambda = -1.0\n")
    assert main(["law", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "error:" in err and "lambda must be positive" in err
    assert main(["law", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_cli_defaults_without_config(capsys):
    assert main(["law"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["lambda"] == 1.0
