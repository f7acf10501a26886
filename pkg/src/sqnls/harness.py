"""Experiment configuration, seeded repetition, dataset fetching and CSV output.

An experiment is one problem, a list of methods and a number of
repetitions. Repetition ``r`` of every method runs with seed
``seed_base + r``. Outputs land in ``out``::

    traces/<problem>_<method>_seed<s>.csv       per-run trace
    traces/<problem>_<method>_seed<s>_iterates.npy
    summary.csv                                 one row per run plus medians
    estimates.csv                               extracted estimate per run
    curves/<method>_iter.csv, <method>_time.csv median cost curves
    *.png                                       figures (optional)
"""

import csv
import dataclasses
import hashlib
import logging
import math
import os
import shutil
import tempfile
import time
import urllib.error
import urllib.request
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from .baselines import BaselineConfig, run_baseline
from .errors import DownloadFailed, SQNError, UnknownDataset
from .optimizer import OptimizerConfig, run
from .problems import LogisticOracle, RosenbrockOracle, load_libsvm, make_classification
from .smc import NonlinearSSM, SSMOracle, read_observations, simulate_data
from .trace import RunTrace, extract_estimate, read_trace_csv, write_trace_csv

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "ExperimentResult",
    "load_config",
    "build_oracle",
    "initial_point",
    "run_single",
    "run_experiment",
    "emit_plot_data",
    "median_curve",
    "fetch_dataset",
    "DATASETS",
    "PRESETS",
    "SUMMARY_HEADER",
]

log = logging.getLogger(__name__)

PROBLEMS = ("rosenbrock", "logistic", "ssm")
METHODS = ("alg1", "sgd", "adam", "svrg")
SUMMARY_HEADER = ("problem", "method", "seed", "final_cost", "iters", "seconds")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; every field maps to one config key."""

    problem: str = "rosenbrock"
    methods: Tuple[str, ...] = ("alg1",)
    reps: int = 1
    seed_base: int = 0
    out: str = "results"
    k_max: int = 200
    budget_s: Optional[float] = None
    workers: int = 1
    timing: str = "wall"
    plots: bool = True
    tail_fraction: float = 0.2
    x0: Optional[Tuple[float, ...]] = None

    # rosenbrock
    noise_std: float = 0.1

    # logistic
    dataset: str = "synthetic"
    n: int = 5000
    dim: int = 50
    margin: float = 0.1
    flip: float = 0.05
    data_seed: int = 0
    batch_size: int = 250
    l2_weight: Optional[float] = None

    # ssm
    n_obs: int = 100
    particles: int = 200
    replicas: int = 1
    resampling: str = "multinomial"
    observations: Optional[str] = None

    # alg1 (stochastic quasi-Newton)
    rho: int = 0
    kappa: float = 0.5
    alpha_bar0: float = 1.0
    alpha_decay: bool = False
    memory: int = 10
    lam: float = 0.1
    sigma2_floor: float = 1e-12
    max_rejects: int = 30
    pair_gradient: str = "common"

    # first-order baselines
    eta: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epoch_length: Optional[int] = None

    def __post_init__(self):
        methods = (self.methods,) if isinstance(self.methods, str) else tuple(self.methods)
        object.__setattr__(self, "methods", methods)
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if not methods:
            raise ValueError("at least one method is required")
        for m in methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if "svrg" in methods and self.problem != "logistic":
            raise ValueError("svrg needs a full gradient and is only available for logistic")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.timing not in ("wall", "none"):
            raise ValueError("timing must be 'wall' or 'none'")
        if self.problem == "logistic" and self.dataset != "synthetic":
            if self.dataset not in DATASETS and not Path(self.dataset).is_file():
                raise FileNotFoundError(f"dataset file {self.dataset!r} does not exist")
        if self.problem == "ssm" and self.observations is not None:
            if not Path(self.observations).is_file():
                raise FileNotFoundError(f"observation file {self.observations!r} does not exist")

    @classmethod
    def from_mapping(cls, mapping):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: v for k, v in mapping.items() if v is not None or k == "budget_s"})

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def optimizer_config(self, seed):
        return OptimizerConfig(
            rho=self.rho,
            kappa=self.kappa,
            alpha_bar0=self.alpha_bar0,
            alpha_decay=self.alpha_decay,
            k_max=self.k_max,
            memory=self.memory,
            lam=self.lam,
            sigma2_floor=self.sigma2_floor,
            max_rejects=self.max_rejects,
            pair_gradient=self.pair_gradient,
            seed=seed,
        )

    def baseline_config(self, method, seed):
        return BaselineConfig(
            method=method,
            eta=self.eta,
            beta1=self.beta1,
            beta2=self.beta2,
            eps_adam=self.eps_adam,
            epoch_length=self.epoch_length,
            k_max=self.k_max,
            seed=seed,
        )


def load_config(path=None, **overrides):
    """Read a flat YAML mapping and apply ``overrides`` (None values ignored)."""
    mapping = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: expected a mapping of config keys")
        mapping.update(loaded)
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_mapping(mapping)


# Desk-scale settings used by `bench`.
PRESETS: Dict[str, dict] = {
    "rosenbrock": dict(
        problem="rosenbrock", methods=("alg1", "adam"), reps=20, k_max=200,
        noise_std=0.1, x0=(-1.5, 2.0), memory=2, lam=1e-4, eta=0.1,
    ),
    "logistic": dict(
        problem="logistic", methods=("alg1", "sgd", "adam", "svrg"), reps=5, k_max=3000,
        n=5000, dim=50, margin=0.1, flip=0.05, batch_size=250, memory=20, lam=0.2,
        eta=0.05,
    ),
    "ssm": dict(
        problem="ssm", methods=("alg1",), reps=20, k_max=300, n_obs=100, particles=200,
        data_seed=1000, x0=(20.0, 1.0), memory=10, lam=10.0,
    ),
}


# --------------------------------------------------------------------------
# problem construction


def _logistic_data(cfg):
    if cfg.dataset == "synthetic":
        return make_classification(cfg.n, cfg.dim, cfg.margin, cfg.flip, seed=cfg.data_seed)
    path = fetch_dataset(cfg.dataset) if cfg.dataset in DATASETS else cfg.dataset
    return load_libsvm(path)


def _ssm_observations(cfg, rep):
    if cfg.observations is not None:
        return read_observations(cfg.observations)
    return simulate_data(NonlinearSSM(), cfg.n_obs, seed=cfg.data_seed + rep)


def build_oracle(cfg, rep=0, data=None):
    """Oracle for repetition ``rep``. SSM data is simulated afresh per repetition."""
    if cfg.problem == "rosenbrock":
        return RosenbrockOracle(cfg.noise_std)
    if cfg.problem == "logistic":
        data = _logistic_data(cfg) if data is None else data
        return LogisticOracle(data, l2_weight=cfg.l2_weight, batch_size=cfg.batch_size)
    return SSMOracle(
        _ssm_observations(cfg, rep),
        N=cfg.particles,
        replicas=cfg.replicas,
        resampling=cfg.resampling,
    )


def initial_point(cfg, oracle):
    if cfg.problem == "ssm":
        theta = cfg.x0 if cfg.x0 is not None else (20.0, 1.0)
        if len(theta) != 2:
            raise ValueError("ssm x0 is (b, q)")
        return SSMOracle.from_theta(theta)
    if cfg.x0 is None:
        return np.zeros(oracle.dim) if cfg.problem == "logistic" else np.array([-1.5, 2.0])
    x0 = np.array(cfg.x0, dtype=float)
    if x0.shape != (oracle.dim,):
        raise ValueError(f"x0 has {len(x0)} entries, problem has dimension {oracle.dim}")
    return x0


# --------------------------------------------------------------------------
# running


@dataclasses.dataclass
class RunResult:
    method: str
    seed: int
    rep: int
    trace: Optional[RunTrace] = None
    estimate: Optional[np.ndarray] = None
    final_cost: float = math.nan
    seconds: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None


@dataclasses.dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: List[RunResult]
    out: Path

    @property
    def failures(self):
        return [r for r in self.runs if not r.ok]

    @property
    def exit_code(self):
        return 1 if self.failures else 0

    def by_method(self):
        grouped = {m: [] for m in self.config.methods}
        for r in self.runs:
            if r.ok:
                grouped[r.method].append(r)
        return grouped


def run_stem(cfg, method, seed):
    return f"{cfg.problem}_{method}_seed{seed}"


def run_single(cfg, method, rep, data=None):
    """Execute one (method, repetition) pair and score its extracted estimate."""
    seed = cfg.seed_base + rep
    result = RunResult(method, seed, rep)
    try:
        oracle = build_oracle(cfg, rep, data)
        x0 = initial_point(cfg, oracle)
        clock = None if cfg.timing == "none" else _perf_counter
        if method == "alg1":
            trace = run(oracle, cfg.optimizer_config(seed), x0, clock=clock, budget_s=cfg.budget_s)
        else:
            trace = run_baseline(oracle, cfg.baseline_config(method, seed), x0, clock=clock,
                                 budget_s=cfg.budget_s)
        trace.state = None  # not picklable cheaply and not needed downstream
        if len(trace) == 0:
            raise SQNError("run produced no iterations")
        result.trace = trace
        result.estimate = extract_estimate(trace, cfg.tail_fraction)
        result.final_cost = float(oracle.full_cost(result.estimate))
        result.seconds = float(trace.records[-1].elapsed_s)
    except Exception as exc:  # recorded and reported; other runs continue
        log.exception("run %s seed %d failed", method, seed)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _perf_counter():
    return time.perf_counter()


def _run_job(args):
    return run_single(*args)


def _fmt(v):
    return format(float(v), ".17g")


def _write_run(cfg, res, trace_dir):
    stem = run_stem(cfg, res.method, res.seed)
    write_trace_csv(res.trace, trace_dir / f"{stem}.csv")
    np.save(trace_dir / f"{stem}_iterates.npy", np.asarray(res.trace.iterates, dtype=float))


def _write_summary(cfg, runs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for method in cfg.methods:
            ok = [r for r in runs if r.method == method and r.ok]
            for r in ok:
                w.writerow([cfg.problem, method, r.seed, _fmt(r.final_cost), len(r.trace), _fmt(r.seconds)])
            if ok:
                w.writerow([
                    cfg.problem, method, "median",
                    _fmt(np.median([r.final_cost for r in ok])),
                    _fmt(np.median([len(r.trace) for r in ok])),
                    _fmt(np.median([r.seconds for r in ok])),
                ])


def _write_estimates(cfg, runs, path):
    ok = [r for r in runs if r.ok]
    d = len(ok[0].estimate) if ok else 0
    cols = [f"x{i + 1}" for i in range(d)]
    if cfg.problem == "ssm":
        cols += ["b", "q"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["problem", "method", "seed", "truncated", *cols])
        for method in cfg.methods:
            for r in (r for r in ok if r.method == method):
                row = [cfg.problem, method, r.seed, int(r.trace.truncated), *map(_fmt, r.estimate)]
                if cfg.problem == "ssm":
                    row += list(map(_fmt, SSMOracle.to_theta(r.estimate)))
                w.writerow(row)


def run_experiment(cfg, progress=None):
    """Run every (method, repetition) pair and write all outputs.

    Failed runs are logged and listed in ``failures.txt``; everything that
    did succeed is still written. Check ``result.exit_code``.
    """
    out = Path(cfg.out)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    # shared read-only data for the serial path; workers rebuild their own
    data = _logistic_data(cfg) if cfg.problem == "logistic" and cfg.workers == 1 else None
    jobs = [(cfg, m, r, data) for m in cfg.methods for r in range(cfg.reps)]
    runs = []
    if cfg.workers == 1:
        for job in jobs:
            runs.append(run_single(*job))
            if progress:
                progress(runs[-1])
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for res in pool.map(_run_job, jobs):
                runs.append(res)
                if progress:
                    progress(res)

    for res in runs:
        if res.ok:
            _write_run(cfg, res, trace_dir)
    _write_summary(cfg, runs, out / "summary.csv")
    _write_estimates(cfg, runs, out / "estimates.csv")
    failures = [r for r in runs if not r.ok]
    fail_path = out / "failures.txt"
    if failures:
        fail_path.write_text("".join(f"{r.method} seed {r.seed}: {r.error}\n" for r in failures))
    elif fail_path.exists():
        fail_path.unlink()

    result = ExperimentResult(cfg, runs, out)
    grouped = {m: [r.trace for r in rs] for m, rs in result.by_method().items() if rs}
    if grouped:
        emit_plot_data(grouped, out / "curves")
        if cfg.plots:
            from . import plotting

            plotting.render_experiment(result)
    return result


# --------------------------------------------------------------------------
# curve data


def median_curve(traces, column="f"):
    """Elementwise median of ``column`` over traces, truncated to the shortest."""
    if not traces:
        raise ValueError("need at least one trace")
    length = min(len(t) for t in traces)
    stacked = np.array([t.column(column)[:length] for t in traces])
    return np.median(stacked, axis=0)


def emit_plot_data(traces, out_dir):
    """Write per-method median cost curves against iteration and wall time.

    ``traces`` maps a method name to its list of run traces. Returns the
    written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for method, group in traces.items():
        if not group:
            continue
        f = median_curve(group, "f")
        t = median_curve(group, "elapsed_s")
        k = np.arange(1, len(f) + 1)
        for name, header, xs in (("iter", "k", k), ("time", "elapsed_s", t)):
            path = out_dir / f"{method}_{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([header, "f"])
                for a, b in zip(xs, f):
                    w.writerow([int(a) if name == "iter" else _fmt(a), _fmt(b)])
            written.append(path)
    return written


def load_traces(out_dir, problem, method):
    """Re-read the stored traces and iterates of one method, sorted by seed."""
    trace_dir = Path(out_dir) / "traces"
    found = []
    prefix = f"{problem}_{method}_seed"
    for path in trace_dir.glob(f"{prefix}*.csv"):
        seed = int(path.stem[len(prefix):])
        trace = read_trace_csv(path)
        trace.iterates = list(np.load(trace_dir / f"{path.stem}_iterates.npy"))
        found.append((seed, trace))
    return [t for _, t in sorted(found, key=lambda p: p[0])]


# --------------------------------------------------------------------------
# datasets

_LIBSVM_BASE = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary/"

# name -> (file name, sha256 or None)
DATASETS: Dict[str, Tuple[str, Optional[str]]] = {
    "gisette": ("gisette_scale.bz2", None),
    "covtype": ("covtype.libsvm.binary.scale.bz2", None),
    "HIGGS": ("HIGGS.xz", None),
    "SUSY": ("SUSY.xz", None),
    "epsilon": ("epsilon_normalized.xz", None),
    "rcv1": ("rcv1_train.binary.bz2", None),
    "URL": ("url_combined_normalized.bz2", None),
}


def cache_dir():
    """Dataset cache: ``$SQNLS_CACHE`` or ``~/.cache/sqnls``."""
    return Path(os.environ.get("SQNLS_CACHE") or Path.home() / ".cache" / "sqnls")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_dataset(name, base_url=None, cache=None):
    """Return a local path to LIBSVM dataset ``name``, downloading on a cache miss.

    ``base_url`` (or ``$SQNLS_DATA_URL``) replaces the LIBSVM mirror.
    """
    if name not in DATASETS:
        raise UnknownDataset(f"unknown dataset {name!r}; supported: {', '.join(sorted(DATASETS))}")
    filename, checksum = DATASETS[name]
    cache = Path(cache) if cache is not None else cache_dir()
    target = cache / filename
    if target.is_file() and target.stat().st_size > 0:
        return target

    base = base_url or os.environ.get("SQNLS_DATA_URL") or _LIBSVM_BASE
    url = base.rstrip("/") + "/" + filename
    cache.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=cache, prefix=filename, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as dst, urllib.request.urlopen(url, timeout=60) as src:
            shutil.copyfileobj(src, dst)
        if os.path.getsize(tmp) == 0:
            raise DownloadFailed(f"empty download from {url}")
        if checksum is not None:
            digest = _sha256(tmp)
            if digest != checksum:
                warnings.warn(f"checksum mismatch for {url}: got {digest}", stacklevel=2)
        os.replace(tmp, target)
    except DownloadFailed:
        raise
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise DownloadFailed(f"could not download {url}: {exc}") from exc
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return target
