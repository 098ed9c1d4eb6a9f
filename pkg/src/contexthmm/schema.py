"""Contextual feature vocabulary, log parsing, time features, downsampling.

A context log is a flat CSV ``timestamp,user,<feature>...`` with one row per
(timestamp, user) and empty cells for unavailable features.  Internally a
dataset is a list of per-user observation sequences sharing one time grid;
missing slots are stored as empty-pair observations.
"""

from __future__ import annotations

import csv
import datetime as _dt
from collections import Counter
from dataclasses import dataclass, field, replace

from .errors import AlignmentError, ParseError, PeriodError, SchemaError

__all__ = [
    "FeatureDef",
    "FeatureSchema",
    "ContextObservation",
    "ObservationSequence",
    "Dataset",
    "load_schema",
    "save_schema",
    "load_holidays",
    "load_log",
    "write_log",
    "downsample",
    "derive_time_features",
    "time_feature_defs",
    "demo_schema",
]

DAY_PERIOD = "Day Period"
DAY_NAME = "Day Name"
HOLIDAY = "Holiday"

DAY_PERIOD_VALUES = ["Morning", "Noon", "Afternoon", "Evening", "Night"]
DAY_NAME_VALUES = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]
HOLIDAY_VALUES = ["Yes", "No"]

# Half-open [start, end) hour bins; Night wraps around midnight.
_DAY_PERIOD_BINS = [(7, 11, "Morning"), (11, 14, "Noon"), (14, 18, "Afternoon"),
                    (18, 21, "Evening")]


@dataclass(frozen=True)
class FeatureDef:
    """One categorical feature: a dense id, a name, and its value vocabulary."""

    feature_id: int
    name: str
    cardinality: int
    value_names: tuple[str, ...]

    def __post_init__(self):
        if self.cardinality < 1:
            raise SchemaError(f"feature {self.name!r}: cardinality must be >= 1")
        if len(self.value_names) != self.cardinality:
            raise SchemaError(
                f"feature {self.name!r}: {len(self.value_names)} value names "
                f"for cardinality {self.cardinality}")
        if len(set(self.value_names)) != self.cardinality:
            raise SchemaError(f"feature {self.name!r}: duplicate value names")

    def value_id(self, name: str) -> int:
        try:
            return self.value_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown value {name!r} for feature {self.name!r}") from None


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature vocabulary; feature ids are dense 1..F."""

    features: tuple[FeatureDef, ...]

    def __post_init__(self):
        ids = [f.feature_id for f in self.features]
        if ids != list(range(1, len(self.features) + 1)):
            raise SchemaError("feature ids must be dense 1..F in order")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")

    @property
    def F(self) -> int:
        return len(self.features)

    @property
    def value_counts(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.features)

    def feature(self, feature_id: int) -> FeatureDef:
        return self.features[feature_id - 1]

    def by_name(self, name: str) -> FeatureDef:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"unknown feature {name!r}")

    def has_feature(self, name: str) -> bool:
        return any(f.name == name for f in self.features)


@dataclass(frozen=True)
class ContextObservation:
    """Feature-value pairs available for one user at one time slot."""

    timestamp: int
    user_id: int
    pairs: tuple[tuple[int, int], ...]  # (feature_id, value_id), sorted

    def __post_init__(self):
        fids = [f for f, _ in self.pairs]
        if len(set(fids)) != len(fids):
            raise SchemaError("a feature appears more than once in one observation")
        object.__setattr__(self, "pairs", tuple(sorted(self.pairs)))

    @property
    def is_empty(self) -> bool:
        return not self.pairs

    def value_of(self, feature_id: int) -> int | None:
        for f, v in self.pairs:
            if f == feature_id:
                return v
        return None


@dataclass(frozen=True)
class ObservationSequence:
    """One user's time-ordered observations on a fixed sampling grid."""

    user_id: int
    user_label: str
    period_seconds: int
    observations: tuple[ContextObservation, ...]

    def __post_init__(self):
        ts = [o.timestamp for o in self.observations]
        expected = [ts[0] + i * self.period_seconds for i in range(len(ts))] if ts else []
        if ts != expected:
            raise AlignmentError("observation timestamps must advance by exactly one period")

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class Dataset:
    """Aligned multi-user observation sequences plus their shared schema."""

    schema: FeatureSchema
    sequences: tuple[ObservationSequence, ...]

    def __post_init__(self):
        if not self.sequences:
            raise SchemaError("dataset needs at least one user sequence")
        first = [o.timestamp for o in self.sequences[0].observations]
        for seq in self.sequences[1:]:
            if [o.timestamp for o in seq.observations] != first:
                raise AlignmentError("all users must share identical timestamps")
        self._validate_pairs()

    def _validate_pairs(self):
        counts = self.schema.value_counts
        for seq in self.sequences:
            for obs in seq.observations:
                for f, v in obs.pairs:
                    if not 1 <= f <= self.schema.F:
                        raise SchemaError(f"feature id {f} outside schema")
                    if not 0 <= v < counts[f - 1]:
                        raise SchemaError(
                            f"value id {v} outside vocabulary of feature {f}")

    @property
    def M(self) -> int:
        return len(self.sequences)

    @property
    def T(self) -> int:
        return len(self.sequences[0])

    @property
    def period_seconds(self) -> int:
        return self.sequences[0].period_seconds

    @property
    def timestamps(self) -> list[int]:
        return [o.timestamp for o in self.sequences[0].observations]

    @property
    def user_labels(self) -> list[str]:
        return [s.user_label for s in self.sequences]

    def restrict(self, user_labels: list[str]) -> "Dataset":
        """Subset to the given users (re-numbered 1..len(user_labels))."""
        chosen = []
        for lbl in user_labels:
            matches = [s for s in self.sequences if s.user_label == lbl]
            if not matches:
                raise SchemaError(f"unknown user {lbl!r}")
            chosen.append(matches[0])
        seqs = []
        for uid, seq in enumerate(chosen, start=1):
            obs = tuple(replace(o, user_id=uid) for o in seq.observations)
            seqs.append(replace(seq, user_id=uid, observations=obs))
        return Dataset(self.schema, tuple(seqs))

    def window(self, start: int, stop: int) -> "Dataset":
        """Slice every sequence to observation indices [start, stop)."""
        if not 0 <= start < stop <= self.T:
            raise ValueError(f"bad window [{start}, {stop}) for T={self.T}")
        seqs = tuple(replace(s, observations=s.observations[start:stop])
                     for s in self.sequences)
        return Dataset(self.schema, seqs)


# ---------------------------------------------------------------------------
# Schema and holiday files

def time_feature_defs(next_id: int) -> list[FeatureDef]:
    """The three derived time features, starting at the given feature id."""
    return [
        FeatureDef(next_id, DAY_PERIOD, 5, tuple(DAY_PERIOD_VALUES)),
        FeatureDef(next_id + 1, DAY_NAME, 7, tuple(DAY_NAME_VALUES)),
        FeatureDef(next_id + 2, HOLIDAY, 2, tuple(HOLIDAY_VALUES)),
    ]


def demo_schema(n_places: int = 6, n_cells: int = 4) -> FeatureSchema:
    """Small synthetic schema: two location-like features plus time features."""
    defs = [
        FeatureDef(1, "Place", n_places, tuple(f"place{i}" for i in range(n_places))),
        FeatureDef(2, "Cell", n_cells, tuple(f"cell{i}" for i in range(n_cells))),
    ]
    defs.extend(time_feature_defs(3))
    return FeatureSchema(tuple(defs))


def load_schema(path) -> FeatureSchema:
    """Read a schema file: one ``name:cardinality:v1|v2|...`` per line."""
    defs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(":", 2)
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected name:cardinality:values")
            name, card_s, values_s = parts
            try:
                card = int(card_s)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad cardinality {card_s!r}") from None
            values = tuple(values_s.split("|")) if values_s else ()
            defs.append(FeatureDef(len(defs) + 1, name, card, values))
    if not defs:
        raise ParseError(f"{path}: empty schema file")
    return FeatureSchema(tuple(defs))


def save_schema(schema: FeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in schema.features:
            fh.write(f"{f.name}:{f.cardinality}:{'|'.join(f.value_names)}\n")


def load_holidays(path) -> set[_dt.date]:
    """Read a holidays file: one ISO date per line."""
    days = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                days.add(_dt.date.fromisoformat(line))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad date {line!r}") from None
    return days


# ---------------------------------------------------------------------------
# Log CSV

def _parse_timestamp(text: str, where: str) -> int:
    try:
        t = _dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise ParseError(f"{where}: bad timestamp {text!r}") from None
    if t.tzinfo is None:
        t = t.replace(tzinfo=_dt.timezone.utc)
    return int(t.timestamp())


def _format_timestamp(ts: int) -> str:
    t = _dt.datetime.fromtimestamp(ts, tz=_dt.timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def load_log(path, schema: FeatureSchema, period_seconds: int | None = None) -> Dataset:
    """Parse and validate a context log CSV against the schema.

    Users are clipped to their overlapping time range; slots with no row for
    a user become empty observations.  Unknown features or values are
    rejected, never coerced.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header[:2] != ["timestamp", "user"]:
            raise ParseError(f"{path}: header must start with timestamp,user")
        feature_names = header[2:]
        for name in feature_names:
            if not schema.has_feature(name):
                raise SchemaError(f"{path}: unknown feature {name!r} in header")
        fdefs = [schema.by_name(n) for n in feature_names]

        rows: dict[str, dict[int, tuple[tuple[int, int], ...]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c for c in row):
                continue
            if len(row) != 2 + len(feature_names):
                raise ParseError(f"{path}:{lineno}: expected {2 + len(feature_names)} cells")
            ts = _parse_timestamp(row[0], f"{path}:{lineno}")
            user = row[1]
            if not user:
                raise ParseError(f"{path}:{lineno}: empty user")
            pairs = []
            for fdef, cell in zip(fdefs, row[2:]):
                if cell == "":
                    continue
                pairs.append((fdef.feature_id, fdef.value_id(cell)))
            per_user = rows.setdefault(user, {})
            if ts in per_user:
                raise ParseError(f"{path}:{lineno}: duplicate (timestamp, user) row")
            per_user[ts] = tuple(pairs)

    if not rows:
        raise ParseError(f"{path}: no data rows")
    return _assemble(schema, rows, period_seconds)


def _assemble(schema, rows, period_seconds) -> Dataset:
    all_ts = sorted({ts for per_user in rows.values() for ts in per_user})
    if period_seconds is None:
        diffs = {b - a for a, b in zip(all_ts, all_ts[1:])}
        period_seconds = min(diffs) if diffs else 3600
    if max(min(p) for p in rows.values()) > min(max(p) for p in rows.values()):
        raise AlignmentError("users' time ranges do not overlap")
    start, stop = all_ts[0], all_ts[-1]
    for per_user in rows.values():
        for ts in per_user:
            if (ts - start) % period_seconds != 0:
                raise AlignmentError(
                    f"timestamp {_format_timestamp(ts)} is off the "
                    f"{period_seconds}s grid")
    grid = list(range(start, stop + 1, period_seconds))
    seqs = []
    for uid, label in enumerate(sorted(rows), start=1):
        per_user = rows[label]
        obs = tuple(ContextObservation(ts, uid, per_user.get(ts, ()))
                    for ts in grid)
        seqs.append(ObservationSequence(uid, label, period_seconds, obs))
    return Dataset(schema, tuple(seqs))


def write_log(dataset: Dataset, path) -> None:
    """Write a dataset back to log CSV.  Empty observations are omitted."""
    names = [f.name for f in dataset.schema.features]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "user"] + names)
        for i in range(dataset.T):
            for seq in dataset.sequences:
                obs = seq.observations[i]
                if obs.is_empty:
                    continue
                cells = [""] * dataset.schema.F
                for f, v in obs.pairs:
                    cells[f - 1] = dataset.schema.feature(f).value_names[v]
                writer.writerow([_format_timestamp(obs.timestamp), seq.user_label] + cells)


# ---------------------------------------------------------------------------
# Transforms

def downsample(dataset: Dataset, target_period: int) -> Dataset:
    """Aggregate to one observation per target slot per user.

    Within a slot each feature keeps its most frequent value; ties go to the
    earliest occurrence.  Slots are anchored at epoch multiples of the target
    period so hourly slots line up with clock hours.
    """
    src = dataset.period_seconds
    if target_period % src != 0:
        raise PeriodError(f"target period {target_period} is not a multiple of {src}")
    seqs = []
    for seq in dataset.sequences:
        slots: dict[int, list[ContextObservation]] = {}
        for obs in seq.observations:
            slots.setdefault(obs.timestamp - obs.timestamp % target_period, []).append(obs)
        first = min(slots)
        last = max(slots)
        new_obs = []
        for ts in range(first, last + 1, target_period):
            members = slots.get(ts, [])
            pairs = []
            per_feature: dict[int, Counter] = {}
            order: dict[tuple[int, int], int] = {}
            for rank, obs in enumerate(members):
                for f, v in obs.pairs:
                    per_feature.setdefault(f, Counter())[v] += 1
                    order.setdefault((f, v), rank)
            for f, counts in per_feature.items():
                best = max(counts, key=lambda v: (counts[v], -order[(f, v)]))
                pairs.append((f, best))
            new_obs.append(ContextObservation(ts, seq.user_id, tuple(pairs)))
        seqs.append(replace(seq, period_seconds=target_period, observations=tuple(new_obs)))
    return Dataset(dataset.schema, tuple(seqs))


def day_period_value(hour: int) -> str:
    for lo, hi, name in _DAY_PERIOD_BINS:
        if lo <= hour < hi:
            return name
    return "Night"


def derive_time_features(dataset: Dataset, holidays: set[_dt.date] = frozenset()) -> Dataset:
    """Attach Day Period / Day Name / Holiday pairs derived from timestamps.

    Saturdays, Sundays, and any listed dates map to Holiday=Yes.  Every
    observation gains the three pairs, including otherwise empty slots.
    """
    schema = dataset.schema
    for name, card in ((DAY_PERIOD, 5), (DAY_NAME, 7), (HOLIDAY, 2)):
        if not schema.has_feature(name):
            raise SchemaError(f"schema lacks feature {name!r}")
        if schema.by_name(name).cardinality != card:
            raise SchemaError(f"feature {name!r} must have {card} values")
    period_def = schema.by_name(DAY_PERIOD)
    day_def = schema.by_name(DAY_NAME)
    holiday_def = schema.by_name(HOLIDAY)

    seqs = []
    for seq in dataset.sequences:
        new_obs = []
        for obs in seq.observations:
            t = _dt.datetime.fromtimestamp(obs.timestamp, tz=_dt.timezone.utc)
            is_holiday = t.weekday() >= 5 or t.date() in holidays
            derived = {
                period_def.feature_id: period_def.value_id(day_period_value(t.hour)),
                day_def.feature_id: day_def.value_id(DAY_NAME_VALUES[t.weekday()]),
                holiday_def.feature_id: holiday_def.value_id("Yes" if is_holiday else "No"),
            }
            pairs = {f: v for f, v in obs.pairs}
            pairs.update(derived)
            new_obs.append(ContextObservation(obs.timestamp, obs.user_id,
                                              tuple(pairs.items())))
        seqs.append(replace(seq, observations=tuple(new_obs)))
    return Dataset(schema, tuple(seqs))
