"""Experiment harness: ``key = value`` configs in, delimited traces out.

A config fully determines a run (problem, topology, algorithm, steps, cadence,
output), and the same config always reproduces the same trace byte for byte.
Config files are line-oriented ``key = value`` with dotted dataset keys
(``dataset.path = data/a9a``); traces are plain CSV with a pinned 8-column
header followed by ``#``-prefixed footer comments carrying the exact
sampling/evaluation counters, so a trace file is self-describing about its
cost accounting.  Divergence is not hidden: the partial trace is still written
and a ``<output>.diverged`` marker file records where the run died.
"""
from __future__ import annotations

import math
import os
import re
import time
from dataclasses import dataclass

import numpy as np

from .diagnostics import (
    METRIC_COLUMNS,
    LyapunovCoeffs,
    MetricRow,
    TheoryParams,
    potential_series,
)
from .objective import (
    SigmoidObjective,
    parse_libsvm,
    partition,
    random_quadratic,
    smoothness,
    synthetic_logistic,
)
from .optimizer import ALGORITHMS, DivergenceError, HyperParams, RunResult, run
from .topology import MixingMatrix, build_complete, build_regular3, build_ring

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "OUTPUT_DIR_ENV",
    "load_config",
    "parse_config_text",
    "validate_config",
    "serialize_config",
    "resolve_schedule",
    "make_hyperparams",
    "build_topology",
    "build_problem",
    "run_experiment",
    "ExperimentResult",
    "write_trace",
    "read_trace",
    "compare_runs",
    "RunComparison",
]

OUTPUT_DIR_ENV = "ADAMDO_OUTPUT_DIR"

TOPOLOGIES = ("ring", "regular3", "complete")
OBJECTIVES = ("synthetic", "libsvm", "quadratic")
ADAPTIVE_KINDS = ("adam", "bb", "identity")
DIAGNOSTIC_TOKENS = ("gap", "loss", "consensus", "estimator", "tracking", "lyapunov")

# canonical key order for serialization / canonicalization
_KEY_ORDER = (
    "algorithm",
    "topology",
    "nodes",
    "seed",
    "objective",
    "dataset",
    "gamma",
    "eta",
    "beta",
    "varrho",
    "rho",
    "adaptive",
    "batch",
    "T",
    "record_every",
    "workers",
    "diagnostics",
    "output",
)

_DATASET_KEY_ORDER = (
    "path",
    "n_per_node",
    "dim",
    "heterogeneity",
    "margin",
    "label_noise",
    "lambda",
    "mu_min",
    "mu_max",
    "on_extra_labels",
)

DEFAULTS: dict = {
    "algorithm": "adamdos",
    "topology": "ring",
    "nodes": 5,
    "seed": 0,
    "objective": "synthetic",
    "gamma": 0.01,
    "eta": 0.9,
    "beta": 0.9,
    "varrho": 0.9,
    "rho": 1e-3,
    "adaptive": "adam",
    "batch": None,  # resolved per algorithm: 1, or ceil(sqrt(n)) for minibatch loops
    "T": 1000,
    "record_every": "epoch",
    "workers": 1,
    "diagnostics": ["gap", "loss", "consensus"],
    "output": "trace.csv",
}

_DATASET_DEFAULTS = {
    "synthetic": {
        "n_per_node": 200,
        "dim": 20,
        "heterogeneity": 0.5,
        "margin": 0.0,
        "label_noise": 0.3,
        "lambda": 1e-5,
    },
    "libsvm": {"lambda": 1e-5, "on_extra_labels": "error"},
    "quadratic": {"n_per_node": 1, "dim": 10, "mu_min": 0.5, "mu_max": 3.0},
}

# horizon-anchored schedule literal, e.g. "1/T^{2/3}" or "0.5/T^0.66"
_SCHEDULE_RE = re.compile(
    r"^\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*/\s*T\s*\^\s*"
    r"(?:\{\s*([0-9]*\.?[0-9]+)\s*/\s*([0-9]*\.?[0-9]+)\s*\}|([0-9]*\.?[0-9]+))\s*$"
)


class ConfigError(ValueError):
    """Invalid experiment config; the message lists every violation found."""

    def __init__(self, problems: list[str]) -> None:
        super().__init__("invalid config: " + "; ".join(problems))
        self.problems = list(problems)


def resolve_schedule(value, T: int) -> float:
    """Turn a numeric or horizon-anchored string value into a float.

    Strings of the form ``"c/T^{p/q}"`` (or ``"c/T^p"``) evaluate to
    ``c / T**(p/q)`` at the run horizon, so configs can pin e.g. a
    ``T^{-2/3}`` estimator schedule without hand-computing it.
    """
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    m = _SCHEDULE_RE.match(str(value))
    if m is None:
        raise ConfigError([f"cannot parse schedule literal {value!r}"])
    if T < 1:
        raise ConfigError([f"schedule literal {value!r} needs a horizon T >= 1, got T={T}"])
    c = float(m.group(1))
    exp = float(m.group(2)) / float(m.group(3)) if m.group(2) else float(m.group(4))
    return c / float(T) ** exp


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_schedule(v) -> bool:
    return isinstance(v, str) and _SCHEDULE_RE.match(v) is not None


_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

# keys whose values stay verbatim strings even when they look numeric-ish
_STRING_KEYS = {"algorithm", "topology", "objective", "adaptive", "output"}
_STRING_DS_KEYS = {"path", "on_extra_labels"}


def _parse_value(key: str, text: str):
    """Type a raw config token: int, then float, else the verbatim string.

    ``diagnostics`` becomes a comma-separated token list; schedule literals
    like ``1/T^{2/3}`` fail the numeric patterns and stay strings, which is
    what :func:`resolve_schedule` expects.
    """
    if key == "diagnostics":
        return [tok.strip() for tok in text.split(",") if tok.strip()]
    if key in _STRING_KEYS or key.partition(".")[2] in _STRING_DS_KEYS:
        return text
    if _INT_RE.match(text):
        return int(text)
    if _FLOAT_RE.match(text):
        return float(text)
    return text


def parse_config_text(text: str, *, source: str = "<config>") -> dict:
    """Parse line-oriented ``key = value`` config text into a raw dict.

    Blank lines and ``#`` comments are skipped; ``dataset.<key>`` lines fill
    the nested dataset object.  Malformed lines and duplicate keys are
    collected into one :class:`ConfigError` so a bad file reports everything
    at once.
    """
    raw: dict = {}
    dataset: dict = {}
    problems: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, eq, value = stripped.partition("=")
        if not eq:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
            continue
        key = key.strip()
        value = value.strip()
        if not key:
            problems.append(f"{source}:{lineno}: missing key before '='")
            continue
        section, dot, sub = key.partition(".")
        if dot:
            if section != "dataset":
                problems.append(f"{source}:{lineno}: unknown section {section!r}")
                continue
            if sub in dataset:
                problems.append(f"{source}:{lineno}: duplicate key {key!r}")
                continue
            dataset[sub] = _parse_value(key, value)
        else:
            if key in raw:
                problems.append(f"{source}:{lineno}: duplicate key {key!r}")
                continue
            raw[key] = _parse_value(key, value)
    if problems:
        raise ConfigError(problems)
    if dataset:
        raw["dataset"] = dataset
    return raw


def validate_config(raw: dict) -> dict:
    """Normalize a raw config dict; raise :class:`ConfigError` with every
    violation at once.  Schedule strings are kept verbatim (they round-trip
    through :func:`serialize_config`) and resolve at run time."""
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a key/value mapping"])
    problems: list[str] = []
    cfg = dict(DEFAULTS)
    cfg["diagnostics"] = list(DEFAULTS["diagnostics"])
    known = set(_KEY_ORDER)
    for key in raw:
        if key not in known:
            problems.append(f"unknown key {key!r}")
    cfg.update({k: v for k, v in raw.items() if k in known})

    if cfg["algorithm"] not in ALGORITHMS:
        problems.append(f"algorithm must be one of {ALGORITHMS}, got {cfg['algorithm']!r}")
    if cfg["topology"] not in TOPOLOGIES:
        problems.append(f"topology must be one of {TOPOLOGIES}, got {cfg['topology']!r}")
    if not isinstance(cfg["nodes"], int) or isinstance(cfg["nodes"], bool) or cfg["nodes"] < 2:
        problems.append(f"nodes must be an integer >= 2, got {cfg['nodes']!r}")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        problems.append(f"seed must be a nonnegative integer, got {cfg['seed']!r}")
    if cfg["objective"] not in OBJECTIVES:
        problems.append(f"objective must be one of {OBJECTIVES}, got {cfg['objective']!r}")

    ds_defaults = _DATASET_DEFAULTS.get(cfg["objective"], {})
    ds = dict(ds_defaults)
    raw_ds = raw.get("dataset", {})
    if not isinstance(raw_ds, dict):
        problems.append("dataset must be an object")
        raw_ds = {}
    for key in raw_ds:
        if key not in _DATASET_KEY_ORDER:
            problems.append(f"unknown dataset key {key!r}")
    ds.update({k: v for k, v in raw_ds.items() if k in _DATASET_KEY_ORDER})
    if cfg["objective"] == "libsvm":
        if not isinstance(ds.get("path"), str) or not ds.get("path"):
            problems.append("libsvm objective needs dataset.path")
        if ds.get("on_extra_labels") not in ("error", "drop"):
            problems.append(
                f"dataset.on_extra_labels must be 'error' or 'drop', got {ds.get('on_extra_labels')!r}"
            )
    else:
        if "path" in ds:
            problems.append(f"dataset.path only applies to libsvm, not {cfg['objective']}")
        if not isinstance(ds.get("n_per_node"), int) or ds.get("n_per_node", 0) < 1:
            problems.append(f"dataset.n_per_node must be a positive integer, got {ds.get('n_per_node')!r}")
        if not isinstance(ds.get("dim"), int) or ds.get("dim", 0) < 1:
            problems.append(f"dataset.dim must be a positive integer, got {ds.get('dim')!r}")
    if cfg["objective"] == "synthetic":
        het = ds.get("heterogeneity")
        if not _is_number(het) or het < 0:
            problems.append(f"dataset.heterogeneity must be a nonnegative number, got {het!r}")
        for key in ("margin", "label_noise"):
            v = ds.get(key)
            if not _is_number(v) or v < 0:
                problems.append(f"dataset.{key} must be a nonnegative number, got {v!r}")
    if cfg["objective"] == "quadratic":
        mu_min, mu_max = ds.get("mu_min"), ds.get("mu_max")
        if not _is_number(mu_min) or mu_min <= 0:
            problems.append(f"dataset.mu_min must be positive, got {mu_min!r}")
        elif not _is_number(mu_max) or mu_max < mu_min:
            problems.append(f"dataset.mu_max must be >= mu_min, got {mu_max!r}")
    if cfg["objective"] != "quadratic":
        lam = ds.get("lambda")
        if not _is_number(lam) or lam < 0:
            problems.append(f"dataset.lambda must be a nonnegative number, got {lam!r}")
    cfg["dataset"] = ds

    for key, lo_open in (("gamma", True),):
        v = cfg[key]
        if _is_schedule(v):
            continue
        if not _is_number(v) or (v <= 0 if lo_open else v < 0):
            problems.append(f"{key} must be a positive number or schedule string, got {v!r}")
    for key in ("beta", "eta"):
        v = cfg[key]
        if not _is_schedule(v) and (not _is_number(v) or not 0 < v <= 1):
            problems.append(f"{key} must be in (0, 1] or a schedule string, got {v!r}")
    if not _is_number(cfg["varrho"]) or not 0 < cfg["varrho"] < 1:
        problems.append(f"varrho must be in (0, 1), got {cfg['varrho']!r}")
    if not _is_number(cfg["rho"]) or cfg["rho"] <= 0:
        problems.append(f"rho must be positive, got {cfg['rho']!r}")
    if cfg["adaptive"] not in ADAPTIVE_KINDS:
        problems.append(f"adaptive must be one of {ADAPTIVE_KINDS}, got {cfg['adaptive']!r}")
    b = cfg["batch"]
    if b is not None and (not isinstance(b, int) or isinstance(b, bool) or b < 1):
        problems.append(f"batch must satisfy 1 <= b <= n (or be omitted), got {b!r}")
    if not isinstance(cfg["T"], int) or isinstance(cfg["T"], bool) or cfg["T"] < 0:
        problems.append(f"T must be a nonnegative integer, got {cfg['T']!r}")
    re_ = cfg["record_every"]
    if re_ != "epoch" and (not isinstance(re_, int) or isinstance(re_, bool) or re_ < 1):
        problems.append(f"record_every must be 'epoch' or a positive integer, got {re_!r}")
    w = cfg["workers"]
    if not isinstance(w, int) or isinstance(w, bool) or w < 1:
        problems.append(f"workers must be a positive integer, got {w!r}")
    diag = cfg["diagnostics"]
    if not isinstance(diag, list) or any(not isinstance(t, str) for t in diag):
        problems.append(f"diagnostics must be a list of tokens, got {diag!r}")
    else:
        for tok in diag:
            if tok not in DIAGNOSTIC_TOKENS:
                problems.append(f"unknown diagnostics token {tok!r} (allowed: {DIAGNOSTIC_TOKENS})")
    if not isinstance(cfg["output"], str) or not cfg["output"]:
        problems.append(f"output must be a nonempty path, got {cfg['output']!r}")

    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str) -> dict:
    """Read and validate a ``key = value`` config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return validate_config(parse_config_text(text, source=path))


def _render_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(value)
    return str(value)


def serialize_config(cfg: dict) -> str:
    """Render a validated config in canonical ``key = value`` order.

    The output parses back to the same config (``parse_config_text`` →
    :func:`validate_config` is the identity on it), schedule strings
    included; ``batch = None`` (the resolve-at-runtime default) is omitted
    rather than serialized.
    """
    lines = []
    for key in _KEY_ORDER:
        if key not in cfg:
            continue
        if key == "dataset":
            for sub in _DATASET_KEY_ORDER:
                if sub in cfg["dataset"]:
                    lines.append(f"dataset.{sub} = {_render_value(cfg['dataset'][sub])}")
            continue
        if key == "batch" and cfg[key] is None:
            continue
        lines.append(f"{key} = {_render_value(cfg[key])}")
    return "\n".join(lines) + "\n"


def _resolve_batch(cfg: dict, n: int) -> int:
    if cfg["batch"] is not None:
        return cfg["batch"]
    if cfg["algorithm"] == "adamdos":
        return 1
    return max(1, math.isqrt(n - 1) + 1)  # ceil(sqrt(n))


def make_hyperparams(cfg: dict, n: int) -> HyperParams:
    """Resolve schedules against the horizon and the batch default against n."""
    return HyperParams(
        gamma=resolve_schedule(cfg["gamma"], cfg["T"]),
        eta=resolve_schedule(cfg["eta"], cfg["T"]),
        beta=resolve_schedule(cfg["beta"], cfg["T"]),
        varrho=cfg["varrho"],
        rho=cfg["rho"],
        batch=_resolve_batch(cfg, n),
        T=cfg["T"],
    )


def build_topology(cfg: dict) -> MixingMatrix:
    m = cfg["nodes"]
    if cfg["topology"] == "ring":
        return build_ring(m)
    if cfg["topology"] == "regular3":
        return build_regular3(m)
    return build_complete(m)


def build_problem(cfg: dict):
    """Materialize (objectives, mixing matrix) for a validated config."""
    W = build_topology(cfg)
    ds = cfg["dataset"]
    m, seed = cfg["nodes"], cfg["seed"]
    if cfg["objective"] == "synthetic":
        objectives = synthetic_logistic(
            m, ds["n_per_node"], ds["dim"], seed,
            heterogeneity=ds["heterogeneity"], lam=ds["lambda"],
            margin=ds["margin"], label_noise=ds["label_noise"],
        )
    elif cfg["objective"] == "libsvm":
        samples = parse_libsvm(ds["path"], on_extra_labels=ds["on_extra_labels"])
        shards = partition(samples, m, seed)
        objectives = [SigmoidObjective(sh, ds["lambda"]) for sh in shards]
    else:
        objectives = random_quadratic(
            m, ds["dim"], seed, n=ds["n_per_node"], mu_min=ds["mu_min"], mu_max=ds["mu_max"],
        )
    return objectives, W


# ---------------------------------------------------------------------------
# Trace files


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_trace(path: str, rows: list[MetricRow], footer: dict) -> None:
    """Write the pinned 8-column CSV plus ``# key = value`` footer comments.

    Floats are rendered with 17 significant digits so re-reading reproduces
    the exact binary values; the footer key order is the insertion order of
    ``footer`` (run_experiment emits a fixed order).
    """
    lines = [",".join(METRIC_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                (
                    str(r.step),
                    _fmt(r.epoch),
                    str(r.samples),
                    _fmt(r.stationary_gap),
                    _fmt(r.loss),
                    _fmt(r.consensus_err),
                    _fmt(r.estimator_err),
                    _fmt(r.tracking_err),
                )
            )
        )
    for key, value in footer.items():
        rendered = _fmt(value) if isinstance(value, float) else str(value)
        lines.append(f"# {key} = {rendered}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path: str) -> tuple[list[MetricRow], dict]:
    """Parse a trace CSV back into rows and its footer dict."""
    rows: list[MetricRow] = []
    footer: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ",".join(METRIC_COLUMNS):
            raise ValueError(f"{path}: unexpected trace header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                key, value = key.strip(), value.strip()
                try:
                    footer[key] = int(value)
                except ValueError:
                    try:
                        footer[key] = float(value)
                    except ValueError:
                        footer[key] = value
                continue
            parts = line.split(",")
            if len(parts) != len(METRIC_COLUMNS):
                raise ValueError(f"{path}: malformed trace row {line!r}")
            rows.append(
                MetricRow(
                    step=int(parts[0]),
                    epoch=float(parts[1]),
                    samples=int(parts[2]),
                    stationary_gap=float(parts[3]),
                    loss=float(parts[4]),
                    consensus_err=float(parts[5]),
                    estimator_err=float(parts[6]),
                    tracking_err=float(parts[7]),
                )
            )
    return rows, footer


# ---------------------------------------------------------------------------
# Running experiments


@dataclass
class ExperimentResult:
    """Everything a run produced, including where it was written."""

    config: dict
    trace: list[MetricRow]
    output_path: str
    diverged: bool
    wall_time: float
    result: RunResult | None = None
    lyapunov_path: str | None = None
    divergence: DivergenceError | None = None


def _output_path(cfg: dict, base_dir: str | None) -> str:
    out = cfg["output"]
    if os.path.isabs(out):
        return out
    base = base_dir or os.environ.get(OUTPUT_DIR_ENV) or os.getcwd()
    return os.path.join(base, out)


def _footer(cfg: dict, hp: HyperParams, result: RunResult, n: int) -> dict:
    """Fixed-order cost accounting appended to every complete trace.

    ``samples_per_node`` counts stochastic draws only; ``grad_evals_per_node``
    counts gradient evaluations (both loops evaluate two gradients per drawn
    sample, so eval_epochs run at twice sample_epochs; init draws included).
    """
    trace = result.trace
    final_gap = trace[-1].stationary_gap if trace else float("nan")
    samples = result.samples_per_node[0] + result.init_samples_per_node[0]
    evals = result.grad_evals_per_node[0]
    return {
        "final_gap": float(final_gap),
        "total_steps": hp.T,
        "samples_per_node": samples,
        "grad_evals_per_node": evals,
        "sample_epochs": samples / n,
        "eval_epochs": evals / n,
    }


def _lyapunov_sidecar(
    cfg: dict, hp: HyperParams, objectives, W: MixingMatrix, result: RunResult, out_path: str
) -> str:
    """Evaluate the run's potential per step and write it next to the trace.

    Only meaningful in the regime the potentials are defined for, so this
    insists on the deterministic setup: quadratic objectives (exact L),
    identity adaptive kind, and for the finite-sum loop a full batch.
    """
    problems = []
    if cfg["objective"] != "quadratic":
        problems.append("lyapunov diagnostics need objective='quadratic' (exact smoothness)")
    if cfg["adaptive"] != "identity":
        problems.append("lyapunov diagnostics need adaptive='identity'")
    if cfg["algorithm"] == "adamdof" and hp.batch != objectives[0].n:
        problems.append("lyapunov diagnostics for the finite-sum loop need batch = n")
    if cfg["algorithm"] == "dpsgd":
        problems.append("no potential is defined for the baseline")
    if problems:
        raise ConfigError(problems)
    tp = TheoryParams(
        L=smoothness(objectives),
        rho=hp.rho,
        nu=W.nu,
        beta=hp.beta,
        gamma=hp.gamma,
        eta=hp.eta,
        n=objectives[0].n,
        b=hp.batch,
    )
    if cfg["algorithm"] == "adamdos":
        coeffs = LyapunovCoeffs.stochastic(tp)
    else:
        coeffs = LyapunovCoeffs.finitesum(tp)
    vals = potential_series(result.snapshots, objectives, coeffs, tp, cfg["algorithm"])
    stem, _ = os.path.splitext(out_path)
    side_path = stem + ".lyapunov.csv"
    lines = ["step,potential"]
    for t, v in enumerate(vals, start=1):
        lines.append(f"{t},{_fmt(float(v))}")
    with open(side_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return side_path


def run_experiment(cfg: dict, *, base_dir: str | None = None) -> ExperimentResult:
    """Run one validated config end to end and write its trace.

    On divergence the partial trace is written anyway, a ``.diverged`` marker
    file records the failing node and step, and the returned result carries
    the exception instead of raising it (callers wanting the exception can
    drive :func:`adamdo.optimizer.run` directly).
    """
    objectives, W = build_problem(cfg)
    n = objectives[0].n
    hp = make_hyperparams(cfg, n)
    want_lyapunov = "lyapunov" in cfg["diagnostics"]
    out_path = _output_path(cfg, base_dir)
    out_dir = os.path.dirname(out_path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    t0 = time.perf_counter()
    try:
        result = run(
            cfg["algorithm"],
            objectives,
            W,
            hp,
            cfg["seed"],
            record_every=cfg["record_every"],
            workers=cfg["workers"],
            adaptive=cfg["adaptive"],
            collect_snapshots=want_lyapunov,
        )
    except DivergenceError as exc:
        wall = time.perf_counter() - t0
        trace = exc.trace
        footer = {
            "final_gap": float(trace[-1].stationary_gap) if trace else float("nan"),
            "total_steps": exc.step,
            "diverged_at_step": exc.step,
            "diverged_node": exc.node,
        }
        write_trace(out_path, trace, footer)
        with open(out_path + ".diverged", "w", encoding="utf-8") as fh:
            fh.write(f"diverged at step {exc.step} on node {exc.node}\n")
        return ExperimentResult(
            config=cfg,
            trace=trace,
            output_path=out_path,
            diverged=True,
            wall_time=wall,
            divergence=exc,
        )
    wall = time.perf_counter() - t0

    write_trace(out_path, result.trace, _footer(cfg, hp, result, n))
    marker = out_path + ".diverged"
    if os.path.exists(marker):
        os.remove(marker)  # this config now completes; drop the stale marker
    lyap_path = None
    if want_lyapunov:
        lyap_path = _lyapunov_sidecar(cfg, hp, objectives, W, result, out_path)
    return ExperimentResult(
        config=cfg,
        trace=result.trace,
        output_path=out_path,
        diverged=False,
        wall_time=wall,
        result=result,
        lyapunov_path=lyap_path,
    )


# ---------------------------------------------------------------------------
# Comparing runs


@dataclass(frozen=True)
class RunComparison:
    """Final-gap ranking of traces recorded on one shared epoch grid.

    ``entries`` are (path, final_gap, final_loss, rows) sorted by final gap
    ascending; ``epochs`` is the common recording grid.  Construction goes
    through :func:`compare_runs`, which rejects mismatched grids — column-wise
    comparison is only meaningful on identical epoch budgets.
    """

    entries: list[tuple[str, float, float, list[MetricRow]]]
    epochs: np.ndarray


def compare_runs(paths: list[str]) -> RunComparison:
    if len(paths) < 2:
        raise ValueError("need at least two traces to compare")
    loaded = []
    for path in paths:
        rows, _ = read_trace(path)
        if not rows:
            raise ValueError(f"{path}: empty trace")
        loaded.append((path, rows))
    grid = np.array([r.epoch for r in loaded[0][1]])
    for path, rows in loaded[1:]:
        g = np.array([r.epoch for r in rows])
        if g.shape != grid.shape or not np.array_equal(g, grid):
            raise ValueError(
                f"{path}: epoch grid differs from {loaded[0][0]}; "
                "compare runs recorded on identical epoch budgets"
            )
    entries = [
        (path, rows[-1].stationary_gap, rows[-1].loss, rows)
        for path, rows in loaded
    ]
    entries.sort(key=lambda e: e[1])
    return RunComparison(entries=entries, epochs=grid)
