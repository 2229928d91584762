"""Config parsing/validation, trace files, experiment driver, comparisons."""
import math
import os

import numpy as np
import pytest

from adamdo import (
    ConfigError,
    DEFAULTS,
    MetricRow,
    build_problem,
    build_topology,
    compare_runs,
    load_config,
    make_hyperparams,
    parse_config_text,
    read_trace,
    resolve_schedule,
    run_experiment,
    serialize_config,
    smoothness,
    theoretical_params_stochastic,
    TheoryParams,
    validate_config,
    write_trace,
)
from adamdo.harness import OUTPUT_DIR_ENV

MINIMAL = "algorithm = adamdos\ngamma = 0.02\n"


def _cfg(**over):
    cfg = validate_config(parse_config_text(MINIMAL))
    ds = over.pop("dataset", None)
    cfg.update(over)
    if ds:
        cfg["dataset"].update(ds)
    return cfg


# ---------------------------------------------------------------------------
# parsing


def test_parse_types_and_sections():
    raw = parse_config_text(
        """
        # a comment line
        algorithm = adamdof
        nodes = 8
        gamma = 2.5e-2
        eta = 1/T^{2/3}
        diagnostics = gap, loss , consensus
        output = runs/trace.csv

        dataset.n_per_node = 50
        dataset.heterogeneity = 0.25
        dataset.path = data/a9a
        """
    )
    assert raw["algorithm"] == "adamdof"
    assert raw["nodes"] == 8 and isinstance(raw["nodes"], int)
    assert raw["gamma"] == 0.025 and isinstance(raw["gamma"], float)
    assert raw["eta"] == "1/T^{2/3}"  # schedule literals stay strings
    assert raw["diagnostics"] == ["gap", "loss", "consensus"]
    assert raw["output"] == "runs/trace.csv"
    assert raw["dataset"] == {"n_per_node": 50, "heterogeneity": 0.25, "path": "data/a9a"}


def test_parse_collects_every_problem():
    text = "gamma 0.1\nnodes = 5\nnodes = 6\n= 3\nmodel.lr = 1\ndataset.dim = 4\ndataset.dim = 5\n"
    with pytest.raises(ConfigError) as err:
        parse_config_text(text, source="bad.cfg")
    msg = str(err.value)
    assert "bad.cfg:1: expected 'key = value'" in msg
    assert "bad.cfg:3: duplicate key 'nodes'" in msg
    assert "bad.cfg:4: missing key" in msg
    assert "bad.cfg:5: unknown section 'model'" in msg
    assert "bad.cfg:7: duplicate key 'dataset.dim'" in msg
    assert len(err.value.problems) == 5


def test_parse_string_keys_stay_verbatim():
    raw = parse_config_text("output = 123\ndataset.path = 42\n")
    assert raw["output"] == "123"
    assert raw["dataset"]["path"] == "42"


# ---------------------------------------------------------------------------
# validation


def test_defaults_fill_in():
    cfg = validate_config(parse_config_text(MINIMAL))
    assert cfg["topology"] == "ring" and cfg["nodes"] == 5
    assert cfg["gamma"] == 0.02  # explicit value kept
    assert cfg["eta"] == DEFAULTS["eta"]
    assert cfg["batch"] is None
    assert cfg["record_every"] == "epoch"
    assert cfg["dataset"]["n_per_node"] == 200
    assert cfg["dataset"]["margin"] == 0.0
    assert cfg["dataset"]["label_noise"] == 0.3


def test_validation_collects_every_violation():
    raw = {
        "algorithm": "sgd",
        "topology": "star",
        "nodes": 1,
        "seed": -1,
        "gamma": -0.5,
        "eta": 2.0,
        "varrho": 1.0,
        "rho": 0,
        "adaptive": "rmsprop",
        "batch": 0,
        "T": -1,
        "record_every": 0,
        "workers": 0,
        "diagnostics": ["gap", "speed"],
        "output": "",
        "mystery": 1,
    }
    with pytest.raises(ConfigError) as err:
        validate_config(raw)
    msg = str(err.value)
    for fragment in (
        "algorithm", "topology", "nodes", "seed", "gamma", "eta", "varrho",
        "rho", "adaptive", "batch", "T", "record_every", "workers",
        "diagnostics token 'speed'", "output", "unknown key 'mystery'",
    ):
        assert fragment in msg, fragment
    assert len(err.value.problems) >= 16


def test_validation_rejects_non_mapping():
    with pytest.raises(ConfigError, match="mapping"):
        validate_config(["not", "a", "dict"])


def test_dataset_rules_per_objective():
    with pytest.raises(ConfigError, match="needs dataset.path"):
        validate_config({"objective": "libsvm", "gamma": 0.1})
    with pytest.raises(ConfigError, match="only applies to libsvm"):
        validate_config({"objective": "synthetic", "dataset": {"path": "x"}, "gamma": 0.1})
    with pytest.raises(ConfigError, match="unknown dataset key 'size'"):
        validate_config({"dataset": {"size": 5}, "gamma": 0.1})
    with pytest.raises(ConfigError, match="mu_max"):
        validate_config(
            {"objective": "quadratic", "dataset": {"mu_min": 2.0, "mu_max": 1.0}, "gamma": 0.1}
        )
    with pytest.raises(ConfigError, match="margin"):
        validate_config({"dataset": {"margin": -0.5}, "gamma": 0.1})
    cfg = validate_config(
        {"objective": "libsvm", "dataset": {"path": "d.txt"}, "gamma": 0.1}
    )
    assert cfg["dataset"]["on_extra_labels"] == "error"
    assert "n_per_node" not in cfg["dataset"]


def test_schedule_strings_pass_validation():
    cfg = validate_config({"gamma": "1/T^{2/3}", "beta": "1/T^{1/2}", "eta": 0.5})
    assert cfg["gamma"] == "1/T^{2/3}"
    with pytest.raises(ConfigError, match="gamma"):
        validate_config({"gamma": "fast"})


# ---------------------------------------------------------------------------
# schedules


def test_resolve_schedule_values():
    assert resolve_schedule(0.25, 100) == 0.25
    assert resolve_schedule(3, 100) == 3.0
    assert resolve_schedule("1/T^{2/3}", 1000) == pytest.approx(0.01, rel=1e-12)
    assert resolve_schedule("0.5/T^0.5", 400) == pytest.approx(0.025, rel=1e-12)
    assert resolve_schedule("2/T^1", 8) == pytest.approx(0.25, rel=1e-15)


def test_resolve_schedule_errors():
    with pytest.raises(ConfigError, match="cannot parse schedule"):
        resolve_schedule("T/2", 100)
    with pytest.raises(ConfigError, match="horizon"):
        resolve_schedule("1/T^{1/2}", 0)


def test_make_hyperparams_resolves_schedules_and_batch():
    cfg = _cfg(algorithm="adamdof", gamma="1/T^{2/3}", T=1000)
    hp = make_hyperparams(cfg, n=200)
    assert hp.gamma == pytest.approx(0.01, rel=1e-12)
    assert hp.batch == 15  # ceil(sqrt(200))
    assert hp.T == 1000
    hp_s = make_hyperparams(_cfg(algorithm="adamdos", T=50), n=200)
    assert hp_s.batch == 1  # stochastic loop defaults to single-sample
    hp_e = make_hyperparams(_cfg(algorithm="adamdof", batch=7), n=200)
    assert hp_e.batch == 7  # explicit batch wins
    for n in (1, 2, 4, 16, 17, 100):
        hp_n = make_hyperparams(_cfg(algorithm="adamdof"), n=n)
        assert hp_n.batch == math.ceil(math.sqrt(n))


# ---------------------------------------------------------------------------
# serialization round trip


def test_serialize_round_trip_identity():
    text = (
        "algorithm = adamdof\ntopology = regular3\nnodes = 6\nseed = 3\n"
        "gamma = 0.0125\nbeta = 1/T^{2/3}\nbatch = 4\nT = 500\n"
        "record_every = 25\ndiagnostics = gap,loss\noutput = out.csv\n"
        "dataset.n_per_node = 64\ndataset.heterogeneity = 0.75\n"
    )
    cfg = validate_config(parse_config_text(text))
    rendered = serialize_config(cfg)
    again = validate_config(parse_config_text(rendered))
    assert again == cfg
    assert serialize_config(again) == rendered
    # canonical order: algorithm first, dataset block in its pinned spot
    lines = rendered.strip().splitlines()
    assert lines[0] == "algorithm = adamdof"
    assert "beta = 1/T^{2/3}" in lines  # schedule survives verbatim


def test_serialize_omits_unresolved_batch():
    cfg = validate_config(parse_config_text(MINIMAL))
    assert cfg["batch"] is None
    assert "batch" not in serialize_config(cfg)


def test_load_config_reads_files(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("gamma = 0.1\nnodes = 4\n")
    cfg = load_config(str(p))
    assert cfg["gamma"] == 0.1 and cfg["nodes"] == 4
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(str(tmp_path / "missing.cfg"))


# ---------------------------------------------------------------------------
# trace files


def _rows():
    return [
        MetricRow(step=1, epoch=1 / 3, samples=10, stationary_gap=0.1 + 1e-17,
                  loss=math.pi, consensus_err=1e-300, estimator_err=0.0,
                  tracking_err=2.0 / 3.0),
        MetricRow(step=2, epoch=2 / 3, samples=20, stationary_gap=1e17,
                  loss=-math.e, consensus_err=0.1, estimator_err=3.0,
                  tracking_err=0.3),
    ]


def test_trace_round_trip_is_exact(tmp_path):
    path = str(tmp_path / "t.csv")
    footer = {"final_gap": 1.0 / 3.0, "total_steps": 2, "note": "hello"}
    write_trace(path, _rows(), footer)
    rows, foot = read_trace(path)
    assert rows == _rows()  # 17 significant digits reproduce every bit
    assert foot == {"final_gap": 1.0 / 3.0, "total_steps": 2, "note": "hello"}
    assert isinstance(foot["total_steps"], int)
    assert isinstance(foot["final_gap"], float)


def test_trace_header_and_row_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("step,epoch\n")
    with pytest.raises(ValueError, match="unexpected trace header"):
        read_trace(str(bad))
    bad.write_text(
        "step,epoch,samples,stationary_gap,loss,consensus_err,estimator_err,tracking_err\n1,2\n"
    )
    with pytest.raises(ValueError, match="malformed trace row"):
        read_trace(str(bad))


# ---------------------------------------------------------------------------
# experiments


def _quick_cfg(tmp_path, **over):
    over.setdefault("output", str(tmp_path / "run.csv"))
    return _cfg(
        nodes=3,
        T=25,
        record_every=5,
        dataset={"n_per_node": 10, "dim": 3},
        **over,
    )


def test_run_experiment_footer_accounting(tmp_path):
    cfg = _quick_cfg(tmp_path)
    res = run_experiment(cfg)
    assert not res.diverged
    assert os.path.exists(res.output_path)
    rows, footer = read_trace(res.output_path)
    assert [r.step for r in rows] == [5, 10, 15, 20, 25]
    assert footer["final_gap"] == rows[-1].stationary_gap
    assert footer["total_steps"] == 25
    # single-sample loop: 25 step draws + 1 init draw; two evals per draw
    assert footer["samples_per_node"] == 26
    assert footer["grad_evals_per_node"] == 51
    assert footer["sample_epochs"] == pytest.approx(2.6, rel=1e-15)
    assert footer["eval_epochs"] == pytest.approx(5.1, rel=1e-15)
    assert res.wall_time > 0


def test_run_experiment_reruns_identically(tmp_path):
    cfg = _quick_cfg(tmp_path)
    run_experiment(cfg)
    first = open(res_path := cfg["output"], "rb").read()
    run_experiment(cfg)
    assert open(res_path, "rb").read() == first


def test_output_dir_resolution(tmp_path, monkeypatch):
    envdir = tmp_path / "from-env"
    envdir.mkdir()
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(envdir))
    cfg = _quick_cfg(tmp_path, output="rel.csv", T=5)
    res = run_experiment(cfg)
    assert res.output_path == str(envdir / "rel.csv")
    # an explicit base_dir wins over the environment
    base = tmp_path / "explicit"
    res2 = run_experiment(cfg, base_dir=str(base))
    assert res2.output_path == str(base / "rel.csv")
    assert os.path.exists(res2.output_path)
    # absolute outputs ignore both
    cfg_abs = _quick_cfg(tmp_path, output=str(tmp_path / "abs.csv"), T=5)
    assert run_experiment(cfg_abs).output_path == str(tmp_path / "abs.csv")


def test_divergence_writes_marker_and_partial_trace(tmp_path):
    cfg = _quick_cfg(
        tmp_path,
        objective="quadratic",
        adaptive="identity",
        gamma=1e100,
        T=40,
        record_every=1,
        dataset={"n_per_node": 1, "dim": 3},
    )
    res = run_experiment(cfg)
    assert res.diverged and res.divergence is not None
    marker = res.output_path + ".diverged"
    assert os.path.exists(marker)
    assert "diverged at step" in open(marker).read()
    rows, footer = read_trace(res.output_path)
    assert len(rows) >= 1
    assert footer["diverged_at_step"] == res.divergence.step
    assert footer["diverged_node"] == res.divergence.node
    # a completing config at the same output clears the stale marker
    cfg["gamma"] = 0.001
    res_ok = run_experiment(cfg)
    assert not res_ok.diverged
    assert not os.path.exists(marker)


def test_lyapunov_sidecar_requirements(tmp_path):
    base = dict(diagnostics=["gap", "lyapunov"], T=5)
    with pytest.raises(ConfigError, match="objective='quadratic'"):
        run_experiment(_quick_cfg(tmp_path, **base))
    with pytest.raises(ConfigError, match="adaptive='identity'"):
        run_experiment(
            _quick_cfg(
                tmp_path, objective="quadratic",
                dataset={"n_per_node": 1, "dim": 3}, **base,
            )
        )
    with pytest.raises(ConfigError, match="batch = n"):
        run_experiment(
            _quick_cfg(
                tmp_path, objective="quadratic", adaptive="identity",
                algorithm="adamdof", batch=1,
                dataset={"n_per_node": 4, "dim": 3}, **base,
            )
        )
    with pytest.raises(ConfigError, match="baseline"):
        run_experiment(
            _quick_cfg(
                tmp_path, objective="quadratic", adaptive="identity",
                algorithm="dpsgd", dataset={"n_per_node": 1, "dim": 3}, **base,
            )
        )


def test_lyapunov_sidecar_values(tmp_path):
    # pick provably admissible steps for the generated problem, then demand
    # the recorded potential never increases
    cfg = _quick_cfg(
        tmp_path,
        objective="quadratic",
        adaptive="identity",
        rho=1.0,
        beta=0.9,
        diagnostics=["gap", "lyapunov"],
        T=60,
        record_every=10,
        dataset={"n_per_node": 1, "dim": 3},
    )
    objectives, W = build_problem(cfg)
    tp = TheoryParams(L=smoothness(objectives), rho=1.0, nu=W.nu, beta=0.9)
    bounds = theoretical_params_stochastic(tp)
    cfg["gamma"] = bounds.gamma_max
    cfg["eta"] = bounds.eta_max / 2.0
    res = run_experiment(cfg)
    assert res.lyapunov_path == str(tmp_path / "run.lyapunov.csv")
    lines = open(res.lyapunov_path).read().strip().splitlines()
    assert lines[0] == "step,potential"
    vals = np.array([float(l.split(",")[1]) for l in lines[1:]])
    assert vals.shape == (60,)
    assert np.all(np.diff(vals) <= 1e-12 * np.abs(vals[:-1]))


def test_build_topology_dispatch():
    assert build_topology(_cfg(topology="ring", nodes=6)).m == 6
    assert build_topology(_cfg(topology="regular3", nodes=6)).degrees.max() == 3
    assert build_topology(_cfg(topology="complete", nodes=4)).nu <= 1e-14


def test_build_problem_objectives():
    objs, W = build_problem(_cfg(nodes=3, dataset={"n_per_node": 7, "dim": 4}))
    assert len(objs) == 3 and W.m == 3
    assert objs[0].n == 7 and objs[0].dim == 4
    objs, _ = build_problem(
        _cfg(objective="quadratic", nodes=3, dataset={"n_per_node": 2, "dim": 5})
    )
    assert objs[0].n == 2 and objs[0].dim == 5


def test_build_problem_libsvm(tmp_path):
    data = tmp_path / "tiny.txt"
    data.write_text("".join(f"{1 if i % 2 else -1} 1:{i}.0 2:1.0\n" for i in range(8)))
    cfg = _cfg(objective="libsvm", nodes=2, dataset={"path": str(data)})
    cfg["dataset"].pop("n_per_node", None)
    objs, _ = build_problem(cfg)
    assert len(objs) == 2 and objs[0].n == 4  # 8 samples split across 2 nodes


# ---------------------------------------------------------------------------
# comparisons


def _write_run(tmp_path, name, **over):
    cfg = _quick_cfg(tmp_path, output=str(tmp_path / name), **over)
    return run_experiment(cfg).output_path


def test_compare_runs_ranks_by_final_gap(tmp_path):
    a = _write_run(tmp_path, "a.csv", seed=0)
    b = _write_run(tmp_path, "b.csv", seed=1)
    c = _write_run(tmp_path, "c.csv", seed=2)
    cmp_ = compare_runs([a, b, c])
    gaps = [e[1] for e in cmp_.entries]
    assert gaps == sorted(gaps)
    assert {e[0] for e in cmp_.entries} == {a, b, c}
    assert cmp_.epochs.shape == (5,)


def test_compare_runs_self_comparison(tmp_path):
    a = _write_run(tmp_path, "a.csv")
    twin = str(tmp_path / "twin.csv")
    with open(a) as src, open(twin, "w") as dst:
        dst.write(src.read())
    cmp_ = compare_runs([a, twin])
    assert cmp_.entries[0][1] == cmp_.entries[1][1]


def test_compare_runs_rejects_mismatched_grids(tmp_path):
    a = _write_run(tmp_path, "a.csv", T=25)
    b = _write_run(tmp_path, "b.csv", T=20)
    with pytest.raises(ValueError, match="epoch grid differs"):
        compare_runs([a, b])
    with pytest.raises(ValueError, match="at least two"):
        compare_runs([a])


def test_compare_runs_rejects_empty_trace(tmp_path):
    a = _write_run(tmp_path, "a.csv")
    empty = str(tmp_path / "empty.csv")
    write_trace(empty, [], {})
    with pytest.raises(ValueError, match="empty trace"):
        compare_runs([a, empty])
