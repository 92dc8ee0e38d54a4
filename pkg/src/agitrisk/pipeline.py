"""Feature construction: raw streams + alert log -> labelled 6x24 samples."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CHANNELS, VITAL_INDEX, VITAL_KINDS, AgitationAlert, EventStream, VitalRanges, VitalStream, to_epoch

log = logging.getLogger(__name__)

HOUR = 3600
N_STEPS = 6
PHYSIO_WINDOW = 72 * HOUR
ALERT_WINDOW = 24 * HOUR
MAX_LATENCY = 72 * HOUR

# population fallbacks when a participant has no prior reading of a kind
DEFAULT_VITALS = {"pulse": 75.0, "systolic": 120.0, "diastolic": 75.0}


@dataclass(frozen=True)
class FeatureLayout:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != 24 or len(set(self.names)) != 24:
            raise ValueError("a feature layout has exactly 24 unique names")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


FEATURE_LAYOUT = FeatureLayout(
    tuple(f"count_{c}" for c in CHANNELS)
    + tuple(f"{k}_{stat}_72h" for k in VITAL_KINDS for stat in ("min", "max", "mean"))
    + ("pulse_low_24h", "pulse_high_24h", "bp_low_24h", "bp_high_24h")
)
COUNT_SLICE = slice(0, 11)
PHYSIO_SLICE = slice(11, 20)
ALERT_SLICE = slice(20, 24)


@dataclass(frozen=True)
class Anchor:
    participant_id: str
    hour: int  # epoch seconds on an hour boundary
    label: int
    parent_alert_id: str
    alert_raised_at: int


@dataclass
class FeatureSample:
    participant_id: str
    anchor_hour: int
    matrix: np.ndarray  # (6, 24); row 0 is anchor - 5h
    label: int
    parent_alert_id: str
    alert_raised_at: int

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (N_STEPS, 24):
            raise ValueError(f"sample matrix must be 6x24, got {self.matrix.shape}")


class CoverageError(ValueError):
    """The streams do not cover the history a sample needs."""


def aggregate_hourly(events: EventStream, hour: int) -> np.ndarray:
    """Per-channel firing counts in the half-open hour ``[hour, hour + 1h)``."""
    lo, hi = np.searchsorted(events.times, [hour, hour + HOUR], side="left")
    return np.bincount(events.channels[lo:hi], minlength=len(CHANNELS)).astype(np.float64)


def _window(times, values, start, stop):
    lo, hi = np.searchsorted(times, [start, stop], side="left")
    return values[lo:hi]


def prior_median(vitals: VitalStream, kind: str, before: int) -> float:
    times, values = vitals.of_kind(kind)
    prior = _window(times, values, np.iinfo(np.int64).min, before)
    if len(prior) == 0:
        return DEFAULT_VITALS[kind]
    return float(np.median(prior))


def physio_aggregates(vitals: VitalStream, hour: int, fallback: dict | None = None) -> np.ndarray:
    """(min, max, mean) of each vital kind over the trailing 72 hours.

    A kind with no reading in the window is imputed from ``fallback[kind]``
    when given, otherwise from the participant's median of all earlier
    readings, otherwise from the population default.
    """
    out = np.empty(9)
    for k, kind in enumerate(VITAL_KINDS):
        times, values = vitals.of_kind(kind)
        win = _window(times, values, hour - PHYSIO_WINDOW, hour)
        if len(win):
            out[3 * k: 3 * k + 3] = (win.min(), win.max(), win.mean())
        else:
            fill = fallback[kind] if fallback and kind in fallback else prior_median(vitals, kind, hour)
            out[3 * k: 3 * k + 3] = fill
    return out


def alert_counts(vitals: VitalStream, hour: int, ranges: VitalRanges) -> np.ndarray:
    """Out-of-range readings over the trailing 24 hours.

    Returns ``[pulse_low, pulse_high, bp_low, bp_high]``; systolic and
    diastolic excursions are pooled.
    """
    lo_i, hi_i = np.searchsorted(vitals.times, [hour - ALERT_WINDOW, hour], side="left")
    kinds = vitals.kinds[lo_i:hi_i]
    values = vitals.values[lo_i:hi_i]
    counts = np.zeros(4)
    for kind in VITAL_KINDS:
        low, high = ranges.bounds(kind)
        sel = values[kinds == VITAL_INDEX[kind]]
        base = 0 if kind == "pulse" else 2
        counts[base] += np.count_nonzero(sel < low)
        counts[base + 1] += np.count_nonzero(sel > high)
    return counts


def filter_alerts(alerts: list[AgitationAlert]) -> list[AgitationAlert]:
    """Keep validated alerts verified within 72 hours (inclusive)."""
    kept = []
    for a in alerts:
        if a.status == "not_validated" or a.validated_at is None:
            continue
        if to_epoch(a.validated_at) - to_epoch(a.raised_at) > MAX_LATENCY:
            continue
        kept.append(a)
    return kept


def expand_labels(alert: AgitationAlert) -> list[Anchor]:
    """Six hourly anchors ending at the hour the alert was raised."""
    if alert.label is None:
        raise ValueError(f"alert {alert.alert_id} is not validated")
    raised = to_epoch(alert.raised_at)
    h = raised - raised % HOUR
    return [
        Anchor(alert.participant_id, h - k * HOUR, alert.label, alert.alert_id, raised)
        for k in range(N_STEPS - 1, -1, -1)
    ]


def feature_row(events: EventStream, vitals: VitalStream, hour: int, ranges: VitalRanges) -> np.ndarray:
    return np.concatenate([
        aggregate_hourly(events, hour),
        physio_aggregates(vitals, hour),
        alert_counts(vitals, hour, ranges),
    ])


def build_sample(
    anchor: Anchor,
    events: EventStream,
    vitals: VitalStream,
    ranges: VitalRanges,
    coverage: tuple[int, int] | None = None,
) -> FeatureSample:
    """Assemble the 6x24 matrix for one anchor.

    ``coverage`` is the ``[start, end)`` span the streams are known to cover;
    anchors needing history outside it raise :class:`CoverageError`.
    """
    first = anchor.hour - (N_STEPS - 1) * HOUR
    if coverage is not None:
        start, end = coverage
        if first - PHYSIO_WINDOW < start:
            raise CoverageError("insufficient history before anchor")
        if anchor.hour + HOUR > end:
            raise CoverageError("anchor hour extends past end of streams")
    rows = [feature_row(events, vitals, first + t * HOUR, ranges) for t in range(N_STEPS)]
    return FeatureSample(
        anchor.participant_id, anchor.hour, np.vstack(rows), anchor.label,
        anchor.parent_alert_id, anchor.alert_raised_at,
    )


def stream_coverage(events: EventStream, vitals: VitalStream) -> tuple[int, int]:
    """Observed span of a participant's streams, widened to whole hours."""
    firsts = [s.times[0] for s in (events, vitals) if len(s)]
    lasts = [s.times[-1] for s in (events, vitals) if len(s)]
    if not firsts:
        return (0, 0)
    start, end = int(min(firsts)), int(max(lasts))
    return start - start % HOUR, end - end % HOUR + HOUR


@dataclass(frozen=True)
class Exclusion:
    participant_id: str
    anchor_hour: int
    parent_alert_id: str
    reason: str


def build_samples(events: dict, vitals: dict, alerts: list[AgitationAlert], ranges: VitalRanges):
    """Filter, expand and featurize every alert.

    Returns ``(samples, exclusions, retained_alerts)`` with samples in canonical
    ``(participant_id, anchor_hour, parent_alert_id)`` order.
    """
    retained = filter_alerts(alerts)
    samples, exclusions = [], []
    coverage = {pid: stream_coverage(events[pid], vitals[pid]) for pid in events}
    for alert in retained:
        pid = alert.participant_id
        for anchor in expand_labels(alert):
            if pid not in events:
                exclusions.append(Exclusion(pid, anchor.hour, alert.alert_id, "no streams for participant"))
                continue
            try:
                samples.append(build_sample(anchor, events[pid], vitals[pid], ranges, coverage[pid]))
            except CoverageError as exc:
                log.info("excluding %s@%d (%s): %s", pid, anchor.hour, alert.alert_id, exc)
                exclusions.append(Exclusion(pid, anchor.hour, alert.alert_id, str(exc)))
    samples.sort(key=lambda s: (s.participant_id, s.anchor_hour, s.parent_alert_id))
    exclusions.sort(key=lambda e: (e.participant_id, e.anchor_hour, e.parent_alert_id))
    return samples, exclusions, retained


class Normalizer:
    """Per-feature min-max scaling fitted on training samples only."""

    def __init__(self):
        self.min_ = None
        self.max_ = None

    def fit(self, matrices: np.ndarray) -> Normalizer:
        matrices = np.asarray(matrices, dtype=np.float64)
        if matrices.size == 0:
            raise ValueError("cannot fit a normalizer on an empty training set")
        flat = matrices.reshape(-1, matrices.shape[-1])
        self.min_ = flat.min(axis=0)
        self.max_ = flat.max(axis=0)
        return self

    def transform(self, matrices: np.ndarray) -> np.ndarray:
        if self.min_ is None:
            raise RuntimeError("normalizer is not fitted")
        span = self.max_ - self.min_
        safe = np.where(span > 0, span, 1.0)
        out = (np.asarray(matrices, dtype=np.float64) - self.min_) / safe
        # constant features carry no information
        return np.where(span > 0, out, 0.0)


def fit_normalizer(train: list[FeatureSample]) -> Normalizer:
    if not train:
        raise ValueError("cannot fit a normalizer on an empty training set")
    return Normalizer().fit(np.stack([s.matrix for s in train]))


def apply_normalizer(sample: FeatureSample, norm: Normalizer) -> FeatureSample:
    return FeatureSample(
        sample.participant_id, sample.anchor_hour, norm.transform(sample.matrix), sample.label,
        sample.parent_alert_id, sample.alert_raised_at,
    )


# ---------------------------------------------------------------------------
# sample files

META_COLUMNS = ["participant_id", "anchor", "label", "parent_alert_id", "alert_raised_at"]


def _iso(epoch: int) -> str:
    return str(np.datetime64(int(epoch), "s")) + "Z"


def _epoch(text: str) -> int:
    if not text.endswith("Z"):
        raise ValueError(f"timestamp must end with 'Z': {text!r}")
    return int(np.datetime64(text[:-1], "s").astype(np.int64))


def sample_columns(layout: FeatureLayout = FEATURE_LAYOUT) -> list[str]:
    return META_COLUMNS + [f"t{t}_{name}" for t in range(N_STEPS) for name in layout.names]


def write_samples(samples: list[FeatureSample], path: Path, headers: dict[str, str]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in headers.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sample_columns())
        for s in samples:
            w.writerow(
                [s.participant_id, _iso(s.anchor_hour), s.label, s.parent_alert_id, _iso(s.alert_raised_at)]
                + [repr(float(x)) for x in s.matrix.ravel()]
            )


def read_samples(path: Path) -> list[FeatureSample]:
    with open(path, encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header != sample_columns():
        raise ValueError(f"{path}: unexpected sample file header")
    out = []
    for row in reader:
        if len(row) != len(header):
            raise ValueError(f"{path}: sample record has {len(row)} fields, expected {len(header)}")
        out.append(FeatureSample(
            row[0], _epoch(row[1]), np.array(row[5:], dtype=np.float64).reshape(N_STEPS, 24),
            int(row[2]), row[3], _epoch(row[4]),
        ))
    return out


def write_exclusions(exclusions: list[Exclusion], path: Path, headers: dict[str, str]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in headers.items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "anchor", "parent_alert_id", "reason"])
        for e in exclusions:
            w.writerow([e.participant_id, _iso(e.anchor_hour), e.parent_alert_id, e.reason])


def stack(samples: list[FeatureSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, N_STEPS, 24)), np.zeros(0, dtype=int)
    return np.stack([s.matrix for s in samples]), np.array([s.label for s in samples], dtype=int)
