import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agitrisk.experiment import (
    DEFAULT_GRID,
    DESK_GRID,
    LEDGER_COLUMNS,
    Combo,
    ConfigError,
    ExperimentConfig,
    Ledger,
    RepetitionResult,
    SampleSet,
    ampm_partition,
    derived_seed,
    enumerate_grid,
    load_config,
    read_ledger,
    result_to_row,
    row_to_result,
    run_experiment,
    run_repetition,
    select_best,
    split_participants,
    split_sizes,
)
from agitrisk.metrics import ConfusionMatrix, MetricsReport
from agitrisk.pipeline import HOUR, FeatureSample
from agitrisk.report import aggregate_report, mean_sd

NOON = 1_557_057_600  # 2019-05-05T12:00:00Z


def make_samples(n_participants=10, alerts_each=4, seed=0, hours=None):
    """Six-sample groups per alert with a learnable shift on positives."""
    rng = np.random.default_rng(seed)
    out = []
    for p in range(n_participants):
        pid = f"p{p + 1:02d}"
        for a in range(alerts_each):
            label = int((a + p) % 3 == 0)
            raised = NOON + (hours[a % len(hours)] - 12) * HOUR if hours else NOON + (a * 7 + p) * HOUR
            h = raised - raised % HOUR
            for k in range(6):
                m = rng.uniform(0, 1, size=(6, 24))
                m[:, :3] += 0.8 * label
                out.append(FeatureSample(pid, h - (5 - k) * HOUR, m, label, f"a{p}-{a}", raised))
    return out


def report(recall=0.5, spec=0.5, tp=1, fn=1, tn=1, fp=1):
    return MetricsReport(ConfusionMatrix(tp, fp, fn, tn), 0.5, 0.5, recall, 0.5, spec, 0.5, recall + spec - 1)


def result(cid, index, val_j, val_recall=0.5, rep=0, model="lstm", degenerate=False, cw=False):
    params = {"batch_size": 32, "epochs": 30, "hidden": 16, "layer_norm": False, "class_weights": cw,
              "architecture": model}
    spec = val_j + 1 - val_recall
    return RepetitionResult("full", cid, index, model, params, rep, report(val_recall, spec), report(), degenerate)


# -- splits -----------------------------------------------------------------

def test_split_sizes():
    assert split_sizes(46) == (33, 8, 5)
    assert split_sizes(3) == (1, 1, 1)
    with pytest.raises(ValueError):
        split_sizes(2)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 200), st.integers(0, 1000))
def test_split_partition(n, rep):
    ids = [f"p{i:03d}" for i in range(n)]
    s = split_participants(ids, rep)
    sizes = (len(s.train), len(s.validation), len(s.test))
    assert sizes == split_sizes(n) and min(sizes) >= 1
    assert s.train.isdisjoint(s.validation) and s.train.isdisjoint(s.test) and s.validation.isdisjoint(s.test)
    assert s.train | s.validation | s.test == set(ids)
    assert split_participants(list(reversed(ids)), rep) == s


def test_splits_vary_with_repetition():
    ids = [f"p{i:02d}" for i in range(46)]
    assert split_participants(ids, 0) != split_participants(ids, 1)


# -- grid -------------------------------------------------------------------

def test_default_grid():
    combos = enumerate_grid(DEFAULT_GRID)
    assert len(combos) == 1152
    assert len({c.combo_id for c in combos}) == 1152
    assert [c.index for c in combos] == list(range(1152))
    winner = Combo(32, 300, 200, False, False, "lstm").combo_id
    assert winner in {c.combo_id for c in combos}
    # lexicographic: the last axis varies fastest
    assert combos[0].architecture == "lstm" and combos[1].architecture == "bilstm"
    assert combos[0].batch_size == 8 and combos[-1].batch_size == 64


def test_desk_grid_small():
    combos = enumerate_grid(DESK_GRID)
    assert len(combos) <= 24 and max(c.epochs for c in combos) <= 60


def test_grid_errors():
    assert len(enumerate_grid({a: v[:1] for a, v in DEFAULT_GRID.items()})) == 1
    with pytest.raises(ConfigError):
        enumerate_grid({**DEFAULT_GRID, "hidden": []})
    with pytest.raises(ConfigError):
        enumerate_grid({**DEFAULT_GRID, "hidden": [16, 16]})
    with pytest.raises(ConfigError):
        ExperimentConfig(grid={"architecture": ["gru"]})
    with pytest.raises(ConfigError):
        ExperimentConfig(grid={"colour": ["red"]})


def test_derived_seed_stable():
    assert derived_seed("lstm-b32", 3) == derived_seed("lstm-b32", 3)
    assert derived_seed("lstm-b32", 3) != derived_seed("lstm-b32", 4)
    assert 0 <= derived_seed("x", 0) < 2**31


# -- config -----------------------------------------------------------------

def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"cohort": {"seed": 5}, "repetitions": 2}))
    cfg = load_config(path)
    assert cfg.cohort_spec.seed == 5 and cfg.repetitions == 2
    assert load_config(path, seed=9).cohort_spec.seed == 9
    desk = load_config(path, desk_scale=True)
    assert desk.grid == DESK_GRID and desk.repetitions == 3
    assert cfg.config_hash() != desk.config_hash()
    assert cfg.data_hash() == desk.data_hash()
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text(json.dumps({"outputs": {}}))
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text(json.dumps({"cohort": {"n_participants": 2}}))
    with pytest.raises(ConfigError):
        load_config(path)


# -- AM/PM ------------------------------------------------------------------

def test_ampm_boundary():
    samples = make_samples(2, 2, hours=[11, 12])
    # minute-level boundary: 11:59 is AM, 12:00 is PM
    am, pm = ampm_partition(samples)
    assert len(am) + len(pm) == len(samples)
    assert {s.alert_raised_at % (24 * HOUR) // HOUR for s in am} == {11}
    assert {s.alert_raised_at % (24 * HOUR) // HOUR for s in pm} == {12}
    edge = [FeatureSample("p01", NOON - HOUR, np.zeros((6, 24)), 1, "x", NOON - 60)]
    assert len(ampm_partition(edge)[0]) == 1
    # all six samples follow their parent even when anchors straddle noon
    straddle = [FeatureSample("p01", NOON - k * HOUR, np.zeros((6, 24)), 1, "y", NOON + 600) for k in range(6)]
    assert len(ampm_partition(straddle)[1]) == 6
    assert len(ampm_partition(straddle, tz_offset_hours=-1)[0]) == 6


# -- repetitions ------------------------------------------------------------

@pytest.fixture(scope="module")
def toy():
    samples = make_samples()
    cfg = ExperimentConfig(grid={"batch_size": [16], "epochs": [2], "hidden": [4], "layer_norm": [False],
                                 "class_weights": [False, True], "architecture": ["lstm"]},
                           forest={"n_trees": 5}, repetitions=2)
    return samples, SampleSet(samples), sorted({s.participant_id for s in samples}), cfg


def test_run_repetition_deterministic(toy):
    _, data, ids, cfg = toy
    combo = enumerate_grid(cfg.grid)[0]
    a = run_repetition(combo, 0, data, ids, cfg)
    b = run_repetition(combo, 0, data, ids, cfg)
    assert result_to_row(a, "h") == result_to_row(b, "h")
    assert a.seed == derived_seed(combo.combo_id, 0)
    split = split_participants(ids, 0)
    assert a.validation.cm.total == int(data.member(split.validation).sum())
    assert a.test.cm.total == int(data.member(split.test).sum())


def test_rf_repetition(toy):
    _, data, ids, cfg = toy
    a = run_repetition("rf", 1, data, ids, cfg)
    b = run_repetition("rf", 1, data, ids, cfg)
    assert a.model == "rf" and a.combo_id == "rf-t5" and a.seed == 1
    assert a.params == {"n_trees": 5}
    assert result_to_row(a, "h") == result_to_row(b, "h")


def test_degenerate_and_single_class(toy):
    samples, _, _, cfg = toy
    negatives = [s for s in samples if s.label == 0]
    data = SampleSet(negatives)
    ids = sorted({s.participant_id for s in negatives})
    r = run_repetition(enumerate_grid(cfg.grid)[0], 0, data, ids, cfg)
    assert r.degenerate and "recall" in r.test.undefined


def test_empty_split_is_reported_not_fatal(toy):
    samples, _, ids, cfg = toy
    keep = set(split_participants(ids, 0).train)
    data = SampleSet([s for s in samples if s.participant_id in keep])
    r = run_repetition("rf", 0, data, ids, cfg)
    assert r.degenerate and r.test.undefined == ["empty"]


# -- selection --------------------------------------------------------------

def test_select_best_examples():
    rs = [result("a", 0, 0.32), result("b", 1, 0.23)]
    assert select_best(rs) == "a"
    assert select_best([result("only", 0, -0.1)]) == "only"
    tie = [result("a", 0, 0.3, 0.70), result("b", 1, 0.3, 0.85)]
    assert select_best(tie) == "b"
    exact = [result("b", 1, 0.3, 0.7), result("a", 0, 0.3, 0.7)]
    assert select_best(exact) == "a"
    with pytest.raises(ValueError):
        select_best([result("a", 0, 0.3, degenerate=True)])
    with pytest.raises(ValueError):
        select_best([])
    rf = RepetitionResult("full", "rf-t100", -1, "rf", {}, 0, report(1, 1), report(), False)
    assert select_best([rf, result("a", 0, 0.1)]) == "a"
    mixed = [result("a", 0, 0.5, cw=True), result("b", 1, 0.2, cw=False), result("c", 2, 0.9, model="bilstm")]
    assert select_best(mixed, architecture="lstm", class_weights=False) == "b"
    assert select_best(mixed, architecture="lstm") == "a"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3), st.sampled_from([0.1, 0.2, 0.3]),
                          st.sampled_from([0.5, 0.7, 0.9]), st.booleans()), min_size=1, max_size=30))
def test_select_best_brute_force(rows):
    results = [result(f"c{c}", c, j, rec, rep=r, degenerate=d) for c, r, j, rec, d in rows]
    table = {}
    for c, _, j, rec, d in rows:
        if not d:
            table.setdefault(c, []).append((j, rec))
    if not table:
        with pytest.raises(ValueError):
            select_best(results)
        return
    best = None
    for c in sorted(table):
        j = sum(v[0] for v in table[c]) / len(table[c])
        rec = sum(v[1] for v in table[c]) / len(table[c])
        if best is None or j > best[0] + 1e-12 or (abs(j - best[0]) <= 1e-12 and rec > best[1] + 1e-12):
            best = (j, rec, c)
    assert select_best(results) == f"c{best[2]}"


# -- ledger -----------------------------------------------------------------

def test_row_roundtrip(toy):
    _, data, ids, cfg = toy
    r = run_repetition(enumerate_grid(cfg.grid)[1], 0, data, ids, cfg)
    back = row_to_result(dict(zip(LEDGER_COLUMNS, result_to_row(r, "h"))))
    assert result_to_row(back, "h") == result_to_row(r, "h")


def test_experiment_resume_and_ledger(tmp_path, toy):
    samples, _, _, cfg = toy
    ledger = run_experiment(samples, cfg, tmp_path)
    n_jobs = cfg.repetitions * (1 + len(enumerate_grid(cfg.grid)))
    assert len(ledger.done) == n_jobs
    full = (tmp_path / "run_log.csv").read_bytes()

    # drop the last two rows, as if interrupted, then resume
    lines = full.decode().splitlines(keepends=True)
    (tmp_path / "run_log.csv").write_text("".join(lines[:-2]))
    run_experiment(samples, cfg, tmp_path)
    assert (tmp_path / "run_log.csv").read_bytes() == full

    # a finished run does nothing
    run_experiment(samples, cfg, tmp_path)
    assert (tmp_path / "run_log.csv").read_bytes() == full

    contents = read_ledger(tmp_path / "run_log.csv")
    assert contents.meta["config_hash"] == cfg.config_hash() and not contents.warnings
    assert len(contents.results) == n_jobs


def test_parallel_matches_serial(tmp_path, toy):
    samples, _, _, cfg = toy
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
    run_experiment(samples, cfg, tmp_path / "a", n_jobs=1)
    run_experiment(samples, cfg, tmp_path / "b", n_jobs=2)
    assert (tmp_path / "a" / "run_log.csv").read_bytes() == (tmp_path / "b" / "run_log.csv").read_bytes()


def test_foreign_ledger_refused(tmp_path, toy):
    samples, _, _, cfg = toy
    run_experiment(samples, cfg, tmp_path)
    other = ExperimentConfig(grid=cfg.grid, forest={"n_trees": 5}, repetitions=1)
    with pytest.raises(ConfigError):
        run_experiment(samples, other, tmp_path)


def test_corrupt_rows_skipped(tmp_path, toy):
    samples, _, _, cfg = toy
    run_experiment(samples, cfg, tmp_path)
    path = tmp_path / "run_log.csv"
    with open(path, "a") as fh:
        fh.write("garbage,row\n")
        csv.writer(fh).writerow(["h"] + ["x"] * (len(LEDGER_COLUMNS) - 1))
    contents = read_ledger(path)
    assert len(contents.warnings) == 2
    assert len(contents.results) == cfg.repetitions * 3


def test_ampm_jobs_use_best_without_class_weights(tmp_path, toy):
    samples, _, _, cfg = toy
    cfg = ExperimentConfig(grid=cfg.grid, forest={"n_trees": 5}, repetitions=2, am_pm=True)
    ledger = run_experiment(samples, cfg, tmp_path)
    extra = [r for r in ledger.done.values() if r.dataset in ("am", "pm")]
    assert extra and all(not r.params["class_weights"] for r in extra)
    assert {r.dataset for r in extra} == {"am", "pm"}
    assert len(extra) == 2 * cfg.repetitions


# -- aggregation ------------------------------------------------------------

def test_mean_sd():
    assert mean_sd([0.4]) == (0.4, 0.0)
    m, s = mean_sd([0.2, 0.4])
    assert m == pytest.approx(0.3) and s == pytest.approx(0.1)


def test_aggregate_report(tmp_path, toy):
    samples, _, _, cfg = toy
    ledger = run_experiment(samples, cfg, tmp_path)
    results = list(ledger.done.values())
    rep = aggregate_report(results, cfg.config_hash())
    by_id = {s.combo_id: s for s in rep.models}
    assert "rf-t5" in by_id
    for s in rep.models:
        rs = [r for r in results if r.combo_id == s.combo_id and not r.degenerate]
        pooled = ConfusionMatrix(0, 0, 0, 0)
        for r in rs:
            pooled = pooled + r.test.cm
        assert s.cm == pooled
        assert s.stat("f1")[0] == pytest.approx(np.mean([r.test.f1 for r in rs]))
    one = aggregate_report([r for r in results if r.repetition == 0], cfg.config_hash())
    assert all(s.stat(m)[1] == 0 for s in one.models for m in ("accuracy", "recall", "auc"))
    with pytest.raises(ValueError):
        aggregate_report([result("a", 0, 0.1, degenerate=True)], "h")
