"""Tweet corpus, human annotations and the selfie-casualty incident database."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import hashlib
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

from ._util import canonical_json


class CorpusError(ValueError):
    """Raised when an input file is unusable as a whole."""

    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        self.diagnostics = list(diagnostics)
        if diagnostics:
            shown = "\n  ".join(self.diagnostics[:20])
            more = len(self.diagnostics) - 20
            message = f"{message}\n  {shown}" + (f"\n  ... {more} more" if more > 0 else "")
        super().__init__(message)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (-90.0 <= lat <= 90.0):
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not (-180.0 <= lon <= 180.0):
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


# ---------------------------------------------------------------------------
# tweets

@dataclass(frozen=True)
class TweetRecord:
    id: str
    text: str
    hashtags: tuple[str, ...] = ()
    geo: GeoPoint | None = None
    image_ref: str | None = None
    captions: tuple[str, ...] | None = None
    posted_at: dt.datetime = dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc)
    user_id: str = ""

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("tweet id must be a non-empty string")
        if self.captions is not None:
            if any(not isinstance(c, str) or not c.strip() for c in self.captions):
                raise ValueError(f"tweet {self.id}: captions must be non-empty strings")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "hashtags": list(self.hashtags),
            "geo": None if self.geo is None else {"lat": self.geo.lat, "lon": self.geo.lon},
            "image_ref": self.image_ref,
            "captions": None if self.captions is None else list(self.captions),
            "posted_at": format_timestamp(self.posted_at),
            "user_id": self.user_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TweetRecord":
        if not isinstance(d, dict):
            raise ValueError("record is not a JSON object")
        if "id" not in d or d["id"] in (None, ""):
            raise ValueError("missing id")
        text = d.get("text") or ""
        if not isinstance(text, str):
            raise ValueError("text must be a string")
        hashtags = d.get("hashtags")
        if hashtags is None:
            hashtags = HASHTAG_RE.findall(text)
        geo = d.get("geo")
        if geo is not None:
            if isinstance(geo, dict):
                geo = GeoPoint(float(geo["lat"]), float(geo["lon"]))
            else:
                geo = GeoPoint(float(geo[0]), float(geo[1]))
        captions = d.get("captions")
        if captions is not None:
            captions = tuple(captions)
        posted = d.get("posted_at")
        return cls(
            id=str(d["id"]),
            text=text,
            hashtags=tuple(str(h) for h in hashtags),
            geo=geo,
            image_ref=d.get("image_ref") or None,
            captions=captions,
            posted_at=parse_timestamp(posted) if posted else TweetRecord.posted_at,
            user_id=str(d.get("user_id") or ""),
        )


HASHTAG_RE = re.compile(r"#(\w+)")
URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)


def parse_timestamp(value: str) -> dt.datetime:
    """ISO-8601 (``Z`` or offset) or Twitter's ``Mon Aug 01 12:00:00 +0000 2016``."""
    value = value.strip()
    try:
        ts = dt.datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        ts = dt.datetime.strptime(value, "%a %b %d %H:%M:%S %z %Y")
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=dt.timezone.utc)
    return ts.astimezone(dt.timezone.utc)


def format_timestamp(ts: dt.datetime) -> str:
    return ts.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Reject:
    line: int
    record_id: str | None
    cause: str

    def to_dict(self) -> dict:
        return {"line": self.line, "record_id": self.record_id, "cause": self.cause}


@dataclass(frozen=True)
class Corpus:
    records: tuple[TweetRecord, ...] = ()
    rejects: tuple[Reject, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TweetRecord]:
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def by_id(self) -> dict[str, TweetRecord]:
        return {r.id: r for r in self.records}


def _csv_tweet_row(row: dict) -> dict:
    def split(v):
        return [p for p in (v or "").split("|") if p]

    geo = None
    if (row.get("lat") or "").strip() and (row.get("lon") or "").strip():
        geo = {"lat": float(row["lat"]), "lon": float(row["lon"])}
    captions = split(row.get("captions"))
    return {
        "id": row.get("id"),
        "text": row.get("text") or "",
        "hashtags": split(row.get("hashtags")) if "hashtags" in row else None,
        "geo": geo,
        "image_ref": row.get("image_ref") or None,
        "captions": captions or None,
        "posted_at": row.get("posted_at") or None,
        "user_id": row.get("user_id") or "",
    }


def load_tweets(path: str | Path, format: str = "jsonl") -> Corpus:
    """Read a tweet file; invalid records go to ``Corpus.rejects``.

    More than half of the records failing validation is treated as a broken
    file and raises :class:`CorpusError` with one diagnostic per bad line.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc

    if format == "jsonl":
        items: list[tuple[int, object]] = []
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                items.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                items.append((lineno, exc))
    elif format == "csv":
        reader = csv.DictReader(io.StringIO(raw))
        items = [(i, _csv_tweet_row(row)) for i, row in enumerate(reader, start=2)]
    else:
        raise ValueError(f"unsupported tweet format {format!r}")

    records: list[TweetRecord] = []
    rejects: list[Reject] = []
    seen: set[str] = set()
    for lineno, item in items:
        rid = item.get("id") if isinstance(item, dict) else None
        rid = str(rid) if rid not in (None, "") else None
        if isinstance(item, Exception):
            rejects.append(Reject(lineno, None, f"invalid JSON: {item}"))
            continue
        try:
            rec = TweetRecord.from_dict(item)
        except (ValueError, TypeError, KeyError) as exc:
            rejects.append(Reject(lineno, rid, str(exc) or type(exc).__name__))
            continue
        if rec.id in seen:
            rejects.append(Reject(lineno, rec.id, "duplicate id"))
            continue
        seen.add(rec.id)
        records.append(rec)

    if items and len(rejects) * 2 > len(items):
        raise CorpusError(
            f"{path}: {len(rejects)} of {len(items)} records malformed",
            [f"line {r.line}: {r.cause}" for r in rejects],
        )
    return Corpus(tuple(records), tuple(rejects))


def save_tweets(corpus: Corpus | Iterable[TweetRecord], path: str | Path) -> None:
    """Write canonical JSONL: sorted keys, compact separators, UTF-8."""
    records = corpus.records if isinstance(corpus, Corpus) else tuple(corpus)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(canonical_json(rec.to_dict()))
            fh.write("\n")


def save_rejects(rejects: Iterable[Reject], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rejects:
            fh.write(canonical_json(r.to_dict()) + "\n")


@dataclass(frozen=True)
class CorpusStats:
    total_tweets: int
    total_users: int
    tweets_with_images: int
    tweets_with_geo: int
    tweets_with_text_besides_hashtags: int
    first_tweet_at: dt.datetime | None
    last_tweet_at: dt.datetime | None

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        for k in ("first_tweet_at", "last_tweet_at"):
            d[k] = None if d[k] is None else format_timestamp(d[k])
        return d


def has_text_besides_hashtags(text: str) -> bool:
    from .textfeat import tokenize

    stripped = HASHTAG_RE.sub(" ", URL_RE.sub(" ", text))
    return bool(tokenize(stripped))


def corpus_stats(corpus: Corpus) -> CorpusStats:
    recs = corpus.records
    stamps = [r.posted_at for r in recs]
    return CorpusStats(
        total_tweets=len(recs),
        total_users=len({r.user_id for r in recs}),
        tweets_with_images=sum(r.image_ref is not None for r in recs),
        tweets_with_geo=sum(r.geo is not None for r in recs),
        tweets_with_text_besides_hashtags=sum(has_text_besides_hashtags(r.text) for r in recs),
        first_tweet_at=min(stamps) if stamps else None,
        last_tweet_at=max(stamps) if stamps else None,
    )


# ---------------------------------------------------------------------------
# selfie filter / captioner plug points

class SelfieFilter(Protocol):
    def score(self, image_ref: str) -> float:
        """Probability in [0, 1] that the image is a selfie."""
        ...


class Captioner(Protocol):
    def captions(self, image_ref: str) -> list[str]: ...


@dataclass(frozen=True)
class ConstantSelfieFilter:
    value: float = 1.0

    def score(self, image_ref: str) -> float:
        return self.value


@dataclass(frozen=True)
class HashSelfieFilter:
    """Pseudo-random score from the image file name; stable across runs."""

    salt: str = ""

    def score(self, image_ref: str) -> float:
        name = image_ref.rsplit("/", 1)[-1]
        digest = hashlib.sha256((self.salt + name).encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") / 2.0**64


@dataclass(frozen=True)
class RuleBasedSelfieFilter:
    keywords: tuple[str, ...] = ("selfie", "selca", "me_", "self")
    hit: float = 0.9
    miss: float = 0.2

    def score(self, image_ref: str) -> float:
        name = image_ref.lower()
        return self.hit if any(k in name for k in self.keywords) else self.miss


@dataclass
class StaticCaptioner:
    mapping: dict[str, list[str]] = field(default_factory=dict)

    def captions(self, image_ref: str) -> list[str]:
        return list(self.mapping.get(image_ref, []))


def filter_selfies(corpus: Corpus, selfie_filter: SelfieFilter, threshold: float = 0.5) -> Corpus:
    """Keep tweets carrying an image whose selfie score reaches ``threshold``."""
    kept: list[TweetRecord] = []
    rejects = list(corpus.rejects)
    for i, rec in enumerate(corpus.records):
        if rec.image_ref is None:
            continue
        try:
            s = float(selfie_filter.score(rec.image_ref))
        except Exception as exc:  # any filter failure is quarantined, not fatal
            rejects.append(Reject(i, rec.id, f"selfie filter failed: {exc!r}"))
            continue
        if not (0.0 <= s <= 1.0):
            rejects.append(Reject(i, rec.id, f"selfie filter returned {s} outside [0, 1]"))
            continue
        if s >= threshold:
            kept.append(rec)
    return Corpus(tuple(kept), tuple(rejects))


def attach_captions(corpus: Corpus, captioner: Captioner) -> Corpus:
    """Fill missing captions from ``captioner``; records keep existing captions."""
    out = []
    for rec in corpus.records:
        if rec.captions is None and rec.image_ref is not None:
            caps = [c for c in captioner.captions(rec.image_ref) if c.strip()]
            if caps:
                rec = replace(rec, captions=tuple(caps))
        out.append(rec)
    return Corpus(tuple(out), corpus.rejects)


# ---------------------------------------------------------------------------
# annotations

class Label(str, enum.Enum):
    DANGEROUS = "Dangerous"
    NOT_DANGEROUS = "NotDangerous"
    UNSURE = "Unsure"


class RiskReason(str, enum.Enum):
    VEHICLE = "Vehicle"
    WATER = "Water"
    HEIGHT = "Height"
    HEIGHT_AND_WATER = "HeightAndWater"
    ROAD = "Road"
    ANIMAL = "Animal"
    TRAIN = "Train"
    WEAPON = "Weapon"


@dataclass(frozen=True)
class AnnotationRecord:
    tweet_id: str
    label: Label
    risk_reasons: frozenset[RiskReason] = frozenset()
    annotator_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "risk_reasons", frozenset(RiskReason(r) for r in self.risk_reasons))
        if self.risk_reasons and self.label is not Label.DANGEROUS:
            raise ValueError(f"{self.tweet_id}: risk reasons given for a {self.label.value} label")


ANNOTATION_FIELDS = ["tweet_id", "label", "risk_reasons", "annotator_id"]


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    out: list[AnnotationRecord] = []
    problems: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ANNOTATION_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise CorpusError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                reasons = [r for r in (row["risk_reasons"] or "").split("|") if r]
                out.append(AnnotationRecord(row["tweet_id"], row["label"], frozenset(reasons), row["annotator_id"]))
            except ValueError as exc:
                problems.append(f"line {lineno}: {exc}")
    if problems:
        raise CorpusError(f"{path}: invalid annotation rows", problems)
    return out


def save_annotations(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_FIELDS)
        for a in records:
            reasons = "|".join(sorted(r.value for r in a.risk_reasons))
            w.writerow([a.tweet_id, a.label.value, reasons, a.annotator_id])


def resolve_annotations(records: Iterable[AnnotationRecord]) -> dict[str, AnnotationRecord]:
    """Collapse multiple annotators per tweet into one record.

    The majority label wins; a tie is ``Unsure``. Risk reasons are the union
    over annotators who voted Dangerous.
    """
    grouped: dict[str, list[AnnotationRecord]] = {}
    for a in records:
        grouped.setdefault(a.tweet_id, []).append(a)
    out = {}
    for tid, group in grouped.items():
        votes = Counter(a.label for a in group).most_common()
        if len(votes) > 1 and votes[0][1] == votes[1][1]:
            label = Label.UNSURE
        else:
            label = votes[0][0]
        reasons = frozenset().union(*(a.risk_reasons for a in group if a.label is Label.DANGEROUS))
        if label is not Label.DANGEROUS:
            reasons = frozenset()
        out[tid] = AnnotationRecord(tid, label, reasons, "resolved")
    return out


# ---------------------------------------------------------------------------
# incidents

class IncidentReason(str, enum.Enum):
    HEIGHT = "Height"
    WATER = "Water"
    HEIGHT_AND_WATER = "HeightAndWater"
    TRAIN = "Train"
    VEHICLE = "Vehicle"
    ELECTRICITY = "Electricity"
    WEAPON = "Weapon"
    ANIMAL = "Animal"
    OTHER = "Other"


class Gender(str, enum.Enum):
    M = "M"
    F = "F"
    UNKNOWN = "Unknown"


class AgeBand(str, enum.Enum):
    UNDER20 = "Under20"
    A20TO24 = "A20to24"
    A25TO29 = "A25to29"
    A30PLUS = "A30plus"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class IncidentRecord:
    incident_id: str
    date: dt.date
    country: str
    reason: IncidentReason
    deaths: int
    victim_genders: tuple[Gender, ...] = ()
    victim_age_bands: tuple[AgeBand, ...] = ()
    synthetic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "reason", IncidentReason(self.reason))
        object.__setattr__(self, "victim_genders", tuple(Gender(g) for g in self.victim_genders))
        object.__setattr__(self, "victim_age_bands", tuple(AgeBand(a) for a in self.victim_age_bands))
        if not isinstance(self.deaths, int) or self.deaths < 1:
            raise ValueError(f"{self.incident_id}: deaths must be a positive integer")
        if not self.country:
            raise ValueError(f"{self.incident_id}: empty country")
        for name, values in (("victim_genders", self.victim_genders), ("victim_age_bands", self.victim_age_bands)):
            if values and len(values) != self.deaths:
                raise ValueError(f"{self.incident_id}: {len(values)} {name} for {self.deaths} deaths")

    @property
    def is_group(self) -> bool:
        return self.deaths >= 2


@dataclass(frozen=True)
class IncidentSet:
    incidents: tuple[IncidentRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.incidents)

    def __iter__(self) -> Iterator[IncidentRecord]:
        return iter(self.incidents)

    @property
    def total_deaths(self) -> int:
        return sum(i.deaths for i in self.incidents)

    @property
    def group_incidents(self) -> int:
        return sum(i.is_group for i in self.incidents)


INCIDENT_FIELDS = ["incident_id", "date", "country", "reason", "deaths", "victim_genders", "victim_age_bands"]


def load_incidents(path: str | Path | None = None) -> IncidentSet:
    """Load an incident CSV; ``None`` loads the bundled fixture."""
    if path is None:
        text = resources.files("killfie.data").joinpath("incidents.csv").read_text(encoding="utf-8")
        source = "incidents.csv (bundled)"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"cannot read {path}: {exc}") from exc
        source = str(path)
    if not text.strip():
        return IncidentSet()

    reader = csv.DictReader(io.StringIO(text))
    missing = set(INCIDENT_FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise CorpusError(f"{source}: header lacks {sorted(missing)}")
    incidents, problems, seen = [], [], set()
    for lineno, row in enumerate(reader, start=2):
        try:
            rec = IncidentRecord(
                incident_id=row["incident_id"],
                date=dt.date.fromisoformat(row["date"]),
                country=row["country"].strip(),
                reason=row["reason"],
                deaths=int(row["deaths"]),
                victim_genders=tuple(g for g in (row["victim_genders"] or "").split("|") if g),
                victim_age_bands=tuple(a for a in (row["victim_age_bands"] or "").split("|") if a),
                synthetic=(row.get("synthetic") or "").strip().lower() == "true",
            )
            if rec.incident_id in seen:
                raise ValueError(f"duplicate incident_id {rec.incident_id}")
            seen.add(rec.incident_id)
            incidents.append(rec)
        except (ValueError, TypeError) as exc:
            problems.append(f"line {lineno}: {exc}")
    if problems:
        raise CorpusError(f"{source}: schema violations", problems)
    return IncidentSet(tuple(incidents))


BREAKDOWN_DIMENSIONS = ("country", "reason", "group_size", "gender", "age_band")


def incident_breakdown(incidents: IncidentSet, dimension: str) -> list[tuple[str | int, int]]:
    """Ordered count table over one dimension.

    ``country`` and ``reason`` count deaths, ordered by count (descending) and
    then by the date of the first incident. ``group_size`` counts group
    incidents per death toll, ascending. ``gender`` and ``age_band`` count
    victims in enum order.
    """
    if dimension in ("country", "reason"):
        deaths: Counter = Counter()
        first: dict = {}
        for inc in incidents:
            key = inc.country if dimension == "country" else inc.reason.value
            deaths[key] += inc.deaths
            first[key] = min(first.get(key, inc.date), inc.date)
        return sorted(deaths.items(), key=lambda kv: (-kv[1], first[kv[0]], kv[0]))
    if dimension == "group_size":
        sizes = Counter(inc.deaths for inc in incidents if inc.is_group)
        return sorted(sizes.items())
    if dimension == "gender":
        c = Counter(g for inc in incidents for g in inc.victim_genders)
        return [(g.value, c[g]) for g in Gender if c[g]]
    if dimension == "age_band":
        c = Counter(a for inc in incidents for a in inc.victim_age_bands)
        return [(a.value, c[a]) for a in AgeBand if c[a]]
    raise ValueError(f"unknown dimension {dimension!r}; expected one of {BREAKDOWN_DIMENSIONS}")


def country_table(incidents: IncidentSet) -> list[tuple[str, int]]:
    """Countries sharing a casualty count collapsed into one row."""
    rows: list[tuple[list[str], int]] = []
    for country, n in incident_breakdown(incidents, "country"):
        if rows and rows[-1][1] == n:
            rows[-1][0].append(country)
        else:
            rows.append(([country], n))
    return [(", ".join(names), n) for names, n in rows]
