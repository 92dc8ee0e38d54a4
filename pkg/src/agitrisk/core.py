"""Domain vocabulary: raw observations, alerts, participants and vital ranges.

Event-log records are comma separated, one per line::

    p01,2019-05-01T10:05:00Z,motion,kitchen
    p01,2019-05-01T08:00:00Z,vital,pulse,72
    p01,2019-05-01T18:20:00Z,alert,validated_true,a0007,2019-05-02T09:00:00Z

Alert records put the status in the channel slot, then the alert id and an
optional verification timestamp.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

CHANNELS = (
    "back_door",
    "bathroom",
    "bedroom",
    "dining_room",
    "fridge_door",
    "hallway",
    "kitchen",
    "living_room",
    "entrance_door",
    "microwave",
    "study",
)
CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNELS)}

VITAL_KINDS = ("pulse", "systolic", "diastolic")
VITAL_INDEX = {name: i for i, name in enumerate(VITAL_KINDS)}

ALERT_STATUSES = ("validated_true", "validated_false", "not_validated")

DIAGNOSES = (
    "alzheimers",
    "parkinsons_dementia",
    "frontotemporal_dementia",
    "vascular_dementia",
    "other",
)


class ParseError(ValueError):
    """A record that does not conform to the event-log format."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 UTC timestamp with a trailing ``Z``."""
    if not text.endswith("Z"):
        raise ValueError(f"timestamp must be UTC with trailing 'Z': {text!r}")
    ts = datetime.fromisoformat(text[:-1])
    if ts.tzinfo is not None:
        raise ValueError(f"unexpected offset in {text!r}")
    return ts.replace(tzinfo=timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def to_epoch(ts: datetime) -> int:
    return int(ts.timestamp())


def from_epoch(seconds: int) -> datetime:
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc)


def format_value(value: float) -> str:
    # integers print without a fractional part so "72" round-trips
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class SensorEvent:
    participant_id: str
    timestamp: datetime
    channel: str

    def __post_init__(self):
        if self.channel not in CHANNEL_INDEX:
            raise ValueError(f"unknown channel {self.channel!r}")

    @property
    def channel_index(self) -> int:
        return CHANNEL_INDEX[self.channel]


@dataclass(frozen=True)
class VitalReading:
    participant_id: str
    timestamp: datetime
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in VITAL_INDEX:
            raise ValueError(f"unknown vital kind {self.kind!r}")
        if not self.value > 0:
            raise ValueError(f"vital value must be positive, got {self.value}")


@dataclass(frozen=True)
class AgitationAlert:
    alert_id: str
    participant_id: str
    raised_at: datetime
    status: str
    validated_at: datetime | None = None

    def __post_init__(self):
        if self.status not in ALERT_STATUSES:
            raise ValueError(f"unknown alert status {self.status!r}")
        if (self.status == "not_validated") != (self.validated_at is None):
            raise ValueError("validated_at must be present exactly when the alert is validated")
        if self.validated_at is not None and self.validated_at < self.raised_at:
            raise ValueError("validated_at precedes raised_at")

    @property
    def label(self) -> int | None:
        return {"validated_true": 1, "validated_false": 0}.get(self.status)


@dataclass(frozen=True)
class Participant:
    participant_id: str
    age: int
    mmse: int
    sex: str
    diagnosis: str

    def __post_init__(self):
        if not 0 <= self.mmse <= 30:
            raise ValueError(f"mmse out of range: {self.mmse}")
        if self.age <= 0:
            raise ValueError(f"age must be positive: {self.age}")
        if self.diagnosis not in DIAGNOSES:
            raise ValueError(f"unknown diagnosis {self.diagnosis!r}")


@dataclass(frozen=True)
class VitalRanges:
    """Closed per-kind intervals used to flag out-of-range vitals."""

    pulse: tuple[float, float] = (50.0, 110.0)
    systolic: tuple[float, float] = (90.0, 160.0)
    diastolic: tuple[float, float] = (60.0, 100.0)

    def __post_init__(self):
        for kind in VITAL_KINDS:
            low, high = getattr(self, kind)
            if not low < high:
                raise ValueError(f"{kind} range must satisfy low < high, got [{low}, {high}]")

    def bounds(self, kind: str) -> tuple[float, float]:
        return getattr(self, kind)

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in VITAL_KINDS}

    @classmethod
    def from_dict(cls, data: dict | None) -> VitalRanges:
        data = data or {}
        return cls(**{k: tuple(float(x) for x in v) for k, v in data.items()})


def check_vital_range(reading: VitalReading, ranges: VitalRanges) -> bool:
    low, high = ranges.bounds(reading.kind)
    return low <= reading.value <= high


def _parse_ts_field(text: str) -> datetime:
    try:
        return parse_timestamp(text)
    except ValueError as exc:
        raise ParseError("timestamp", f"malformed timestamp {text!r}") from exc


def parse_event_record(line: str) -> SensorEvent | VitalReading | AgitationAlert:
    """Parse one event-log line into its typed observation."""
    parts = line.rstrip("\r\n").split(",")
    if len(parts) < 4:
        raise ParseError("record", f"expected at least 4 fields, got {len(parts)}")
    pid, ts_text, kind = parts[0], parts[1], parts[2]
    if not pid:
        raise ParseError("participant_id", "empty participant id")
    ts = _parse_ts_field(ts_text)

    if kind == "motion":
        if len(parts) != 4:
            raise ParseError("record", "motion records take exactly 4 fields")
        if parts[3] not in CHANNEL_INDEX:
            raise ParseError("channel", f"unknown channel {parts[3]!r}")
        return SensorEvent(pid, ts, parts[3])

    if kind == "vital":
        if len(parts) != 5:
            raise ParseError("record", "vital records take exactly 5 fields")
        if parts[3] not in VITAL_INDEX:
            raise ParseError("vital_kind", f"unknown vital kind {parts[3]!r}")
        try:
            value = float(parts[4])
        except ValueError as exc:
            raise ParseError("value", f"not a number: {parts[4]!r}") from exc
        if not value > 0:
            raise ParseError("value", f"non-positive value {parts[4]}")
        return VitalReading(pid, ts, parts[3], value)

    if kind == "alert":
        if len(parts) not in (5, 6):
            raise ParseError("record", "alert records take 5 or 6 fields")
        status, alert_id = parts[3], parts[4]
        if status not in ALERT_STATUSES:
            raise ParseError("status", f"unknown alert status {status!r}")
        validated_at = None
        if len(parts) == 6:
            try:
                validated_at = parse_timestamp(parts[5])
            except ValueError as exc:
                raise ParseError("validated_at", f"malformed timestamp {parts[5]!r}") from exc
        try:
            return AgitationAlert(alert_id, pid, ts, status, validated_at)
        except ValueError as exc:
            raise ParseError("status", str(exc)) from exc

    raise ParseError("record_kind", f"unknown record kind {kind!r}")


def format_event_record(record: SensorEvent | VitalReading | AgitationAlert) -> str:
    """Inverse of :func:`parse_event_record` (no trailing newline)."""
    if isinstance(record, SensorEvent):
        return f"{record.participant_id},{format_timestamp(record.timestamp)},motion,{record.channel}"
    if isinstance(record, VitalReading):
        return (
            f"{record.participant_id},{format_timestamp(record.timestamp)},vital,"
            f"{record.kind},{format_value(record.value)}"
        )
    if isinstance(record, AgitationAlert):
        line = (
            f"{record.participant_id},{format_timestamp(record.raised_at)},alert,"
            f"{record.status},{record.alert_id}"
        )
        if record.validated_at is not None:
            line += "," + format_timestamp(record.validated_at)
        return line
    raise TypeError(f"cannot format {type(record).__name__}")


@dataclass
class EventStream:
    """Columnar motion/appliance events for one participant, sorted by time.

    ``times`` are UTC epoch seconds, ``channels`` index into :data:`CHANNELS`.
    """

    participant_id: str
    times: np.ndarray
    channels: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.channels = np.asarray(self.channels, dtype=np.int8)
        if self.times.shape != self.channels.shape:
            raise ValueError("times and channels must have equal length")

    def __len__(self):
        return len(self.times)

    def records(self):
        for t, c in zip(self.times.tolist(), self.channels.tolist()):
            yield SensorEvent(self.participant_id, from_epoch(t), CHANNELS[c])


@dataclass
class VitalStream:
    """Columnar vital readings for one participant, sorted by time."""

    participant_id: str
    times: np.ndarray
    kinds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.kinds = np.asarray(self.kinds, dtype=np.int8)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not (self.times.shape == self.kinds.shape == self.values.shape):
            raise ValueError("times, kinds and values must have equal length")

    def __len__(self):
        return len(self.times)

    def of_kind(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        mask = self.kinds == VITAL_INDEX[kind]
        return self.times[mask], self.values[mask]

    def records(self):
        for t, k, v in zip(self.times.tolist(), self.kinds.tolist(), self.values.tolist()):
            yield VitalReading(self.participant_id, from_epoch(t), VITAL_KINDS[k], v)


def local_hour(epoch_seconds, tz_offset_hours: float = 0.0):
    """Hour of day (0-23) in the cohort's local time."""
    shifted = np.asarray(epoch_seconds, dtype=np.int64) + int(round(tz_offset_hours * 3600))
    return (shifted // 3600) % 24
