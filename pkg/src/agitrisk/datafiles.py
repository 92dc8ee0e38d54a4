"""Reading and writing dataset files.

Layout of a dataset directory::

    events/<participant_id>.log     motion + vital records, sorted by time
    alerts.log                      alert records
    cohort.meta                     participant_id,age,mmse,sex,diagnosis
    ground_truth.episodes           participant_id,start,end (evaluation only)

Every file opens with a ``# data_hash=<hex>`` comment line; readers skip
lines starting with ``#``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .core import (
    CHANNEL_INDEX,
    CHANNELS,
    VITAL_INDEX,
    VITAL_KINDS,
    AgitationAlert,
    EventStream,
    ParseError,
    Participant,
    VitalStream,
    format_event_record,
    format_value,
    parse_event_record,
)
from .synth import Dataset, Episode

EVENTS_DIR = "events"
ALERTS_FILE = "alerts.log"
META_FILE = "cohort.meta"
TRUTH_FILE = "ground_truth.episodes"


def stable_hash(obj) -> str:
    """sha256 of the canonical JSON encoding, truncated to 16 hex digits."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def hash_header(name: str, value: str) -> str:
    return f"# {name}={value}\n"


def read_header(path: Path, name: str) -> str | None:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return None
            key, _, value = line[1:].strip().partition("=")
            if key == name:
                return value
    return None


def _iso(times: np.ndarray) -> np.ndarray:
    return np.char.add(np.datetime_as_string(times.astype("datetime64[s]"), unit="s"), "Z")


def format_event_log(events: EventStream, vitals: VitalStream) -> list[str]:
    """Merge motion and vital streams into event-log lines ordered by time."""
    pid = events.participant_id
    ev_lines = np.char.add(
        np.char.add(f"{pid},", _iso(events.times)),
        np.char.add(",motion,", np.array(CHANNELS)[events.channels.astype(int)]),
    )
    vital_vals = np.array([format_value(v) for v in vitals.values.tolist()], dtype=str)
    vi_lines = np.char.add(
        np.char.add(f"{pid},", _iso(vitals.times)),
        np.char.add(
            np.char.add(",vital,", np.array(VITAL_KINDS)[vitals.kinds.astype(int)]),
            np.char.add(",", vital_vals) if len(vital_vals) else np.array([], dtype=str),
        ),
    )
    times = np.concatenate([events.times, vitals.times])
    kind_rank = np.concatenate([np.zeros(len(events.times)), np.ones(len(vitals.times))])
    order = np.lexsort((kind_rank, times))
    return np.concatenate([ev_lines.astype(object), vi_lines.astype(object)])[order].tolist()


def read_event_log(path: Path) -> tuple[EventStream, VitalStream]:
    """Load one participant's event log into columnar streams.

    Raises :class:`ParseError` with the offending line number on bad input.
    """
    pid = None
    ev_t, ev_c, vi_t, vi_k, vi_v = [], [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#") or not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            try:
                if len(parts) == 4 and parts[2] == "motion" and parts[3] in CHANNEL_INDEX:
                    ev_t.append(parts[1])
                    ev_c.append(CHANNEL_INDEX[parts[3]])
                elif len(parts) == 5 and parts[2] == "vital" and parts[3] in VITAL_INDEX:
                    value = float(parts[4])
                    if not value > 0:
                        raise ParseError("value", f"non-positive value {parts[4]}")
                    vi_t.append(parts[1])
                    vi_k.append(VITAL_INDEX[parts[3]])
                    vi_v.append(value)
                else:
                    # slow path produces a precise error
                    rec = parse_event_record(line)
                    raise ParseError("record_kind", f"unexpected {type(rec).__name__} in event log")
                if not parts[1].endswith("Z"):
                    raise ParseError("timestamp", f"malformed timestamp {parts[1]!r}")
            except (ParseError, ValueError) as exc:
                raise ParseError(getattr(exc, "field_name", "record"), f"{path}:{lineno}: {exc}") from exc
            pid = pid or parts[0]
            if parts[0] != pid:
                raise ParseError("participant_id", f"{path}:{lineno}: mixed participants in one log")

    def to_epoch(stamps):
        if not stamps:
            return np.array([], dtype=np.int64)
        try:
            arr = np.array([s[:-1] for s in stamps], dtype="datetime64[s]")
        except ValueError as exc:
            raise ParseError("timestamp", f"{path}: {exc}") from exc
        return arr.astype(np.int64)

    pid = pid or Path(path).stem
    return (
        EventStream(pid, to_epoch(ev_t), np.array(ev_c, dtype=np.int8)),
        VitalStream(pid, to_epoch(vi_t), np.array(vi_k, dtype=np.int8), np.array(vi_v)),
    )


def write_alert_log(alerts: list[AgitationAlert], path: Path, data_hash: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(hash_header("data_hash", data_hash))
        for a in alerts:
            fh.write(format_event_record(a) + "\n")


def read_alert_log(path: Path) -> list[AgitationAlert]:
    alerts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#") or not line.strip():
                continue
            rec = parse_event_record(line)
            if not isinstance(rec, AgitationAlert):
                raise ParseError("record_kind", f"{path}:{lineno}: expected an alert record")
            alerts.append(rec)
    return alerts


def write_dataset(ds: Dataset, out_dir: Path, data_hash: str) -> list[Path]:
    out_dir = Path(out_dir)
    (out_dir / EVENTS_DIR).mkdir(parents=True, exist_ok=True)
    written = []
    for p in ds.participants:
        path = out_dir / EVENTS_DIR / f"{p.participant_id}.log"
        lines = format_event_log(ds.events[p.participant_id], ds.vitals[p.participant_id])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(hash_header("data_hash", data_hash))
            fh.write("\n".join(lines))
            fh.write("\n")
        written.append(path)

    write_alert_log(ds.alerts, out_dir / ALERTS_FILE, data_hash)
    written.append(out_dir / ALERTS_FILE)

    with open(out_dir / META_FILE, "w", encoding="utf-8", newline="") as fh:
        fh.write(hash_header("data_hash", data_hash))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "age", "mmse", "sex", "diagnosis"])
        for p in ds.participants:
            w.writerow([p.participant_id, p.age, p.mmse, p.sex, p.diagnosis])
    written.append(out_dir / META_FILE)

    with open(out_dir / TRUTH_FILE, "w", encoding="utf-8", newline="") as fh:
        fh.write(hash_header("data_hash", data_hash))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["participant_id", "start", "end"])
        for ep in ds.episodes:
            w.writerow([ep.participant_id, _iso(np.array([ep.start]))[0], _iso(np.array([ep.end]))[0]])
    written.append(out_dir / TRUTH_FILE)
    return written


def read_cohort_meta(path: Path) -> list[Participant]:
    with open(path, encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return [
        Participant(r["participant_id"], int(r["age"]), int(r["mmse"]), r["sex"], r["diagnosis"])
        for r in csv.DictReader(rows)
    ]


def load_streams(data_dir: Path) -> tuple[list[Participant], dict, dict, list[AgitationAlert]]:
    """Everything the training path may see: cohort, raw streams and alert log.

    Ground-truth episodes are deliberately not loaded here.
    """
    data_dir = Path(data_dir)
    participants = read_cohort_meta(data_dir / META_FILE)
    events, vitals = {}, {}
    for p in participants:
        ev, vi = read_event_log(data_dir / EVENTS_DIR / f"{p.participant_id}.log")
        events[p.participant_id] = ev
        vitals[p.participant_id] = vi
    alerts = read_alert_log(data_dir / ALERTS_FILE)
    return participants, events, vitals, alerts


def read_ground_truth(path: Path) -> list[tuple[str, int, int]]:
    with open(path, encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    out = []
    for r in csv.DictReader(rows):
        start = np.datetime64(r["start"][:-1], "s").astype(np.int64)
        end = np.datetime64(r["end"][:-1], "s").astype(np.int64)
        out.append((r["participant_id"], int(start), int(end)))
    return out


def episodes_to_rows(episodes: list[Episode]) -> list[tuple[str, int, int]]:
    return [(e.participant_id, e.start, e.end) for e in episodes]
