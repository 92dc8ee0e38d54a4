"""Grid search over participant-level splits, Youden's J selection, AM/PM runs."""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import VitalRanges, local_hour
from .datafiles import stable_hash
from .forest import ForestConfig, fit_forest, predict_forest
from .metrics import MetricsReport, empty_report, evaluate
from .neural import TrainConfig, predict, train
from .pipeline import FeatureSample, Normalizer
from .synth import CohortSpec

log = logging.getLogger(__name__)

GRID_AXES = ("batch_size", "epochs", "hidden", "layer_norm", "class_weights", "architecture")

DEFAULT_GRID = {
    "batch_size": [8, 16, 32, 64],
    "epochs": [50, 100, 150, 200, 250, 300],
    "hidden": [25, 50, 100, 150, 200, 250],
    "layer_norm": [False, True],
    "class_weights": [False, True],
    "architecture": ["lstm", "bilstm"],
}

DESK_GRID = {
    "batch_size": [32],
    "epochs": [30],
    "hidden": [16, 32],
    "layer_norm": [False, True],
    "class_weights": [False, True],
    "architecture": ["lstm", "bilstm"],
}
DESK_REPETITIONS = 3


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    cohort: dict = field(default_factory=dict)
    ranges: dict = field(default_factory=dict)
    grid: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_GRID))
    training: dict = field(default_factory=dict)
    forest: dict = field(default_factory=dict)
    repetitions: int = 10
    am_pm: bool = False

    def __post_init__(self):
        unknown = set(self.grid) - set(GRID_AXES)
        if unknown:
            raise ConfigError(f"unknown grid axes: {sorted(unknown)}")
        self.grid = {axis: list(self.grid.get(axis, DEFAULT_GRID[axis])) for axis in GRID_AXES}
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        try:
            for combo in enumerate_grid(self.grid):
                combo.train_config(0, self.training)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid grid: {exc}") from exc
        try:
            self.cohort_spec.validate()
            self.vital_ranges
            self.forest_config
            TrainConfig(**self.training)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def cohort_spec(self) -> CohortSpec:
        return CohortSpec.from_dict(self.cohort)

    @property
    def vital_ranges(self) -> VitalRanges:
        return VitalRanges.from_dict(self.ranges)

    @property
    def forest_config(self) -> ForestConfig:
        return ForestConfig(**self.forest)

    def resolved(self) -> dict:
        return {
            "cohort": self.cohort_spec.to_dict(),
            "ranges": self.vital_ranges.to_dict(),
            "grid": self.grid,
            "training": self.training,
            "forest": asdict(self.forest_config),
            "repetitions": self.repetitions,
            "am_pm": self.am_pm,
        }

    def data_hash(self) -> str:
        r = self.resolved()
        return stable_hash({"cohort": r["cohort"], "ranges": r["ranges"]})

    def config_hash(self) -> str:
        return stable_hash(self.resolved())


def load_config(path: Path | None = None, desk_scale=False, seed=None, am_pm=False) -> ExperimentConfig:
    data = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    known = {"cohort", "ranges", "grid", "training", "forest", "repetitions", "am_pm"}
    if set(data) - known:
        raise ConfigError(f"unknown config sections: {sorted(set(data) - known)}")
    data = copy.deepcopy(data)
    if desk_scale:
        data["grid"] = copy.deepcopy(DESK_GRID)
        data["repetitions"] = DESK_REPETITIONS
    if seed is not None:
        data.setdefault("cohort", {})["seed"] = int(seed)
    if am_pm:
        data["am_pm"] = True
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# splits and grid


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset
    validation: frozenset
    test: frozenset

    def check(self, ids) -> None:
        parts = (self.train, self.validation, self.test)
        for a, b in itertools.combinations(parts, 2):
            if a & b:
                raise AssertionError(f"participants in more than one split: {sorted(a & b)}")
        if set().union(*parts) != set(ids):
            raise AssertionError("split does not cover the cohort")


def split_sizes(n: int) -> tuple[int, int, int]:
    """70/20/10 participant split: 46 -> (33, 8, 5).

    Test takes ``ceil(0.1 n)``, validation ``floor(0.2 (n - test))``, train
    the remainder; each part keeps at least one participant.
    """
    if n < 3:
        raise ValueError("need at least 3 participants to split")
    n_test = max(1, math.ceil(0.1 * n))
    n_val = max(1, math.floor(0.2 * (n - n_test)))
    return n - n_val - n_test, n_val, n_test


def split_participants(ids, repetition: int) -> SplitAssignment:
    """Shuffle with seed = repetition index, then cut into train/val/test."""
    ids = sorted(ids)
    n_train, n_val, _ = split_sizes(len(ids))
    perm = [ids[i] for i in np.random.default_rng(repetition).permutation(len(ids))]
    split = SplitAssignment(
        frozenset(perm[:n_train]), frozenset(perm[n_train:n_train + n_val]), frozenset(perm[n_train + n_val:])
    )
    split.check(ids)
    return split


@dataclass(frozen=True)
class Combo:
    batch_size: int
    epochs: int
    hidden: int
    layer_norm: bool
    class_weights: bool
    architecture: str
    index: int = 0

    @property
    def combo_id(self) -> str:
        return (
            f"{self.architecture}-b{self.batch_size}-e{self.epochs}-h{self.hidden}"
            f"-ln{int(self.layer_norm)}-cw{int(self.class_weights)}"
        )

    def train_config(self, seed: int, training: dict) -> TrainConfig:
        return TrainConfig(
            architecture=self.architecture, hidden=self.hidden, batch_size=self.batch_size,
            epochs=self.epochs, layer_norm=self.layer_norm, class_weights=self.class_weights,
            seed=seed, **training,
        )


def enumerate_grid(grid: dict) -> list[Combo]:
    """Lexicographic product over the axes in declared order."""
    axes = []
    for axis in GRID_AXES:
        values = grid.get(axis)
        if not values:
            raise ConfigError(f"grid axis {axis!r} is empty")
        axes.append(values)
    combos = [Combo(*values, index=i) for i, values in enumerate(itertools.product(*axes))]
    if len({c.combo_id for c in combos}) != len(combos):
        raise ConfigError("grid contains duplicate values")
    return combos


def derived_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


# ---------------------------------------------------------------------------
# sample sets


class SampleSet:
    """Stacked samples plus per-sample participant and parent-alert hour."""

    def __init__(self, samples: list[FeatureSample], tz_offset_hours: float = 0.0):
        self.samples = samples
        n = len(samples)
        self.X = np.stack([s.matrix for s in samples]) if n else np.zeros((0, 6, 24))
        self.y = np.array([s.label for s in samples], dtype=int)
        self.pids = np.array([s.participant_id for s in samples], dtype=object)
        self.alert_hour = local_hour(np.array([s.alert_raised_at for s in samples], dtype=np.int64), tz_offset_hours)

    def __len__(self):
        return len(self.samples)

    def subset(self, mask) -> SampleSet:
        return SampleSet([s for s, m in zip(self.samples, mask) if m])

    def member(self, ids) -> np.ndarray:
        return np.isin(self.pids, list(ids))


def ampm_partition(samples: list[FeatureSample], tz_offset_hours: float = 0.0):
    """Split by the local hour the parent alert was raised: [0, 12) vs [12, 24)."""
    hours = local_hour(np.array([s.alert_raised_at for s in samples], dtype=np.int64), tz_offset_hours)
    am = [s for s, h in zip(samples, hours) if h < 12]
    pm = [s for s, h in zip(samples, hours) if h >= 12]
    return am, pm


# ---------------------------------------------------------------------------
# repetitions


@dataclass
class RepetitionResult:
    dataset: str
    combo_id: str
    combo_index: int
    model: str
    params: dict
    repetition: int
    validation: MetricsReport
    test: MetricsReport
    degenerate: bool
    seed: int = 0
    duration: float = 0.0

    @property
    def key(self) -> tuple:
        return (self.dataset, self.combo_id, self.repetition)


RF_COMBO_INDEX = -1


def rf_combo_id(config: ForestConfig) -> str:
    return f"rf-t{config.n_trees}"


def run_repetition(combo, repetition: int, data: SampleSet, ids, config: ExperimentConfig,
                   dataset: str = "full") -> RepetitionResult:
    """Split, normalise on train, fit, then score validation and test.

    ``combo`` is a :class:`Combo` or ``"rf"`` for the forest baseline.
    """
    started = time.perf_counter()
    split = split_participants(ids, repetition)
    masks = {name: data.member(getattr(split, name)) for name in ("train", "validation", "test")}
    # leakage guard: a participant's samples land in exactly one split
    if np.any(masks["train"].astype(int) + masks["validation"] + masks["test"] > 1):
        raise AssertionError("sample assigned to more than one split")
    for a, b in itertools.combinations(masks, 2):
        shared = set(data.pids[masks[a]]) & set(data.pids[masks[b]])
        if shared:
            raise AssertionError(f"participants {sorted(shared)} leak between {a} and {b}")

    ytr = data.y[masks["train"]]
    degenerate = any(np.count_nonzero(data.y[masks[k]] == 1) == 0 for k in masks)
    if len(ytr) == 0:
        raise ValueError(f"repetition {repetition}: empty training split")
    norm = Normalizer().fit(data.X[masks["train"]])
    Xtr = norm.transform(data.X[masks["train"]])
    single_class = len(np.unique(ytr)) < 2

    if combo == "rf":
        fcfg = ForestConfig(**{**asdict(config.forest_config), "seed": repetition})
        combo_id, combo_index, model_name = rf_combo_id(fcfg), RF_COMBO_INDEX, "rf"
        params = {"n_trees": fcfg.n_trees}
        seed = fcfg.seed
        if not single_class:
            model = fit_forest(Xtr, ytr, fcfg)
            scorer = lambda X: predict_forest(model, X)  # noqa: E731
    else:
        seed = derived_seed(combo.combo_id, repetition)
        tcfg = combo.train_config(seed, config.training)
        combo_id, combo_index, model_name = combo.combo_id, combo.index, combo.architecture
        params = {k: getattr(combo, k) for k in GRID_AXES}
        if not single_class:
            model = train(Xtr, ytr, tcfg)
            scorer = lambda X: predict(X, model, tcfg)  # noqa: E731
    if single_class:
        # nothing to learn: predict the only class seen in training
        only = int(ytr[0])
        scorer = lambda X: (np.full(len(X), only), np.full(len(X), float(only)))  # noqa: E731

    reports = {}
    for name in ("validation", "test"):
        ys = data.y[masks[name]]
        if len(ys) == 0:
            reports[name] = empty_report()
            continue
        pred, prob = scorer(norm.transform(data.X[masks[name]]))
        reports[name] = evaluate(pred, prob, ys)
    return RepetitionResult(
        dataset, combo_id, combo_index, model_name, params, repetition,
        reports["validation"], reports["test"], degenerate, seed, time.perf_counter() - started,
    )


def _mean(values):
    return float(np.mean(values)) if len(values) else float("nan")


def select_best(results: list[RepetitionResult], architecture: str | None = None,
                class_weights: bool | None = None) -> str:
    """Combo with the highest mean validation J over non-degenerate repetitions.

    Ties go to the higher mean validation recall, then the earlier combo.
    """
    if not results:
        raise ValueError("no results to select from")
    by_combo: dict[str, list[RepetitionResult]] = {}
    for r in results:
        if r.model == "rf" or r.degenerate:
            continue
        if architecture is not None and r.model != architecture:
            continue
        if class_weights is not None and bool(r.params.get("class_weights")) != class_weights:
            continue
        by_combo.setdefault(r.combo_id, []).append(r)
    if not by_combo:
        raise ValueError("every candidate result is degenerate")
    scored = [
        (
            -_mean([r.validation.youden_j for r in rs]),
            -_mean([r.validation.recall for r in rs]),
            rs[0].combo_index,
            cid,
        )
        for cid, rs in by_combo.items()
    ]
    return min(scored)[3]


# ---------------------------------------------------------------------------
# run ledger

LEDGER_FILE = "run_log.csv"
TIMINGS_FILE = "timings.csv"
METRIC_FIELDS = ("tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1", "specificity", "auc", "youden_j")
LEDGER_COLUMNS = (
    ["config_hash", "dataset", "combo_id", "combo_index", "model", *GRID_AXES, "repetition", "seed", "degenerate"]
    + [f"val_{m}" for m in METRIC_FIELDS] + ["val_undefined"]
    + [f"test_{m}" for m in METRIC_FIELDS] + ["test_undefined"]
)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10f}"
    return str(x)


def result_to_row(r: RepetitionResult, config_hash: str) -> list[str]:
    row = [config_hash, r.dataset, r.combo_id, str(r.combo_index), r.model]
    row += [_fmt(r.params[a]) if a in r.params else "" for a in GRID_AXES]
    row += [str(r.repetition), str(r.seed), _fmt(r.degenerate)]
    for rep in (r.validation, r.test):
        d = rep.to_dict()
        row += [_fmt(d[m]) for m in METRIC_FIELDS] + [";".join(rep.undefined)]
    return row


def _parse_params(row: dict) -> dict:
    if row["model"] == "rf":
        return {}
    return {
        "batch_size": int(row["batch_size"]), "epochs": int(row["epochs"]), "hidden": int(row["hidden"]),
        "layer_norm": row["layer_norm"] == "1", "class_weights": row["class_weights"] == "1",
        "architecture": row["architecture"],
    }


def _parse_report(row: dict, prefix: str) -> MetricsReport:
    from .metrics import ConfusionMatrix

    cm = ConfusionMatrix(*(int(row[f"{prefix}_{k}"]) for k in ("tp", "fp", "fn", "tn")))
    vals = {k: float(row[f"{prefix}_{k}"]) for k in METRIC_FIELDS[4:]}
    undefined = [u for u in row[f"{prefix}_undefined"].split(";") if u]
    return MetricsReport(cm=cm, undefined=undefined, **vals)


def row_to_result(row: dict) -> RepetitionResult:
    if list(row) != LEDGER_COLUMNS or any(v is None for v in row.values()):
        raise ValueError("ledger row has the wrong shape")
    return RepetitionResult(
        dataset=row["dataset"], combo_id=row["combo_id"], combo_index=int(row["combo_index"]),
        model=row["model"], params=_parse_params(row), repetition=int(row["repetition"]),
        validation=_parse_report(row, "val"), test=_parse_report(row, "test"),
        degenerate=row["degenerate"] == "1", seed=int(row["seed"]),
    )


@dataclass
class LedgerContents:
    results: list[RepetitionResult]
    config_hashes: set
    warnings: list[str]
    meta: dict = field(default_factory=dict)


def read_ledger(path: Path) -> LedgerContents:
    """Parse a run ledger; malformed rows are skipped with a warning."""
    results, hashes, warnings, meta = [], set(), [], {}
    with open(path, encoding="utf-8", newline="") as fh:
        raw_lines = fh.readlines()
    for line in raw_lines:
        if line.startswith("#") and "=" in line:
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
    lines = [line for line in raw_lines if not line.startswith("#")]
    if not lines:
        return LedgerContents([], hashes, warnings, meta)
    reader = csv.reader(lines)
    header = next(reader)
    if header != LEDGER_COLUMNS:
        raise ValueError(f"{path}: not a run ledger (unexpected header)")
    for lineno, raw in enumerate(reader, 2):
        try:
            if len(raw) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(raw)}")
            row = dict(zip(header, raw))
            results.append(row_to_result(row))
            hashes.add(row["config_hash"])
        except (ValueError, KeyError, TypeError) as exc:
            warnings.append(f"{path}:{lineno}: skipped corrupt row ({exc})")
    return LedgerContents(results, hashes, warnings, meta)


class Ledger:
    """Append-only run log; rows are written in canonical job order."""

    def __init__(self, out_dir: Path, config_hash: str, provenance: dict | None = None):
        self.path = Path(out_dir) / LEDGER_FILE
        self.timings = Path(out_dir) / TIMINGS_FILE
        self.config_hash = config_hash
        self.done: dict[tuple, RepetitionResult] = {}
        if self.path.exists():
            contents = read_ledger(self.path)
            foreign = contents.config_hashes - {config_hash}
            if foreign:
                raise ConfigError(
                    f"{self.path} was produced by a different configuration ({sorted(foreign)}); "
                    "use a fresh output directory"
                )
            for w in contents.warnings:
                log.warning(w)
            self.done = {r.key: r for r in contents.results}
        else:
            with open(self.path, "w", encoding="utf-8", newline="") as fh:
                fh.write(f"# config_hash={config_hash}\n")
                for key, value in (provenance or {}).items():
                    fh.write(f"# {key}={value}\n")
                csv.writer(fh, lineterminator="\n").writerow(LEDGER_COLUMNS)

    def append(self, result: RepetitionResult):
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(result_to_row(result, self.config_hash))
        with open(self.timings, "a", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [result.dataset, result.combo_id, result.repetition, f"{result.duration:.3f}"]
            )
        self.done[result.key] = result


# ---------------------------------------------------------------------------
# orchestration

_WORKER: dict = {}


def _init_worker(datasets, ids, config):
    _WORKER.update(datasets=datasets, ids=ids, config=config)


def _run_job(job):
    dataset, combo, rep = job
    w = _WORKER
    return run_repetition(combo, rep, w["datasets"][dataset], w["ids"], w["config"], dataset)


def _execute(jobs, ledger: Ledger, n_jobs: int):
    pending = [j for j in jobs if _job_key(j) not in ledger.done]
    if not pending:
        return
    log.info("running %d of %d jobs (%d already in ledger)", len(pending), len(jobs), len(jobs) - len(pending))
    if n_jobs <= 1:
        for job in pending:
            ledger.append(_run_job(job))
        return
    with ProcessPoolExecutor(
        max_workers=n_jobs, initializer=_init_worker,
        initargs=(_WORKER["datasets"], _WORKER["ids"], _WORKER["config"]),
    ) as pool:
        # map preserves submission order, so the ledger stays canonical
        for result in pool.map(_run_job, pending):
            ledger.append(result)


def _job_key(job) -> tuple:
    dataset, combo, rep = job
    cid = rf_combo_id(_WORKER["config"].forest_config) if combo == "rf" else combo.combo_id
    return (dataset, cid, rep)


def run_experiment(samples: list[FeatureSample], config: ExperimentConfig, out_dir: Path,
                   n_jobs: int = 1) -> Ledger:
    """Execute (or resume) the grid, the forest baseline and optional AM/PM runs."""
    combos = enumerate_grid(config.grid)
    tz = config.cohort_spec.tz_offset_hours
    ids = sorted({s.participant_id for s in samples})
    am, pm = ampm_partition(samples, tz)
    datasets = {"full": SampleSet(samples, tz), "am": SampleSet(am, tz), "pm": SampleSet(pm, tz)}
    _init_worker(datasets, ids, config)
    spec = config.cohort_spec
    ledger = Ledger(out_dir, config.config_hash(), {
        "data_hash": config.data_hash(), "cohort_seed": spec.seed, "repetitions": config.repetitions,
        "split_seed": "repetition index", "model_seed": "sha256(combo_id|repetition)",
    })
    reps = range(config.repetitions)

    jobs = [("full", "rf", r) for r in reps]
    jobs += [("full", c, r) for c in combos for r in reps]
    _execute(jobs, ledger, n_jobs)

    if config.am_pm:
        full = [r for r in ledger.done.values() if r.dataset == "full"]
        chosen = []
        for arch in config.grid["architecture"]:
            try:
                best = select_best(full, architecture=arch)
            except ValueError:
                continue
            combo = next(c for c in combos if c.combo_id == best)
            # the time-of-day comparison runs without class weights
            plain = next(
                (c for c in combos if c.combo_id == Combo(**{**asdict(combo), "class_weights": False}).combo_id),
                Combo(**{**asdict(combo), "class_weights": False, "index": combo.index}),
            )
            chosen.append(plain)
        jobs = [(ds, c, r) for c in chosen for ds in ("full", "am", "pm") for r in reps]
        _execute(jobs, ledger, n_jobs)
    return ledger
