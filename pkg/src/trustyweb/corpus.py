"""Quran corpus ingestion, publication, and hashing-time benchmarks.

The corpus format is one ayah per line, ``surah|ayah|text``. Blank lines and
lines starting with ``#`` are ignored. A surah's text is its ayahs joined by
a single space; the full text is every surah text followed by ``"\\n"``,
so even a one-surah corpus has a full text distinct from its surah.
"""

from __future__ import annotations

import enum
import io
import os
import statistics
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from .digest import Digest, TrustyUri, compute_digest, compute_digest_streaming

SURAH_COUNT = 114
TEXT_PLAIN = "text/plain; charset=utf-8"


class CorpusError(ValueError):
    pass


class MalformedLine(CorpusError):
    pass


class NonMonotoneOrdering(CorpusError):
    pass


class UnitKind(str, enum.Enum):
    AYAH = "Ayah"
    SURAH = "Surah"
    FULL_TEXT = "FullText"


@dataclass(frozen=True)
class CorpusUnit:
    kind: UnitKind
    surah_no: Optional[int]
    ayah_no: Optional[int]
    text: str

    def __post_init__(self) -> None:
        if self.kind is not UnitKind.FULL_TEXT and not (1 <= (self.surah_no or 0) <= SURAH_COUNT):
            raise ValueError(f"surah number out of range: {self.surah_no}")
        if (self.ayah_no is not None) != (self.kind is UnitKind.AYAH):
            raise ValueError("ayah_no is required for ayahs and only for ayahs")

    @property
    def data(self) -> bytes:
        return self.text.encode("utf-8")

    @property
    def label(self) -> str:
        if self.kind is UnitKind.AYAH:
            return f"{self.surah_no}:{self.ayah_no}"
        if self.kind is UnitKind.SURAH:
            return str(self.surah_no)
        return "full"


@dataclass(frozen=True)
class CorpusStats:
    surah_count: int
    ayah_count: int
    total_words: int
    distinct_words: int

    def to_json(self) -> dict:
        return asdict(self)


def parse_corpus(text: str) -> tuple[list[CorpusUnit], CorpusStats]:
    ayahs: list[CorpusUnit] = []
    by_surah: dict[int, list[str]] = {}
    last: Optional[tuple[int, int]] = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("|", 2)
        if len(fields) != 3:
            raise MalformedLine(f"line {lineno}: expected surah|ayah|text")
        try:
            surah, ayah = int(fields[0]), int(fields[1])
        except ValueError:
            raise MalformedLine(f"line {lineno}: surah and ayah must be integers") from None
        if not 1 <= surah <= SURAH_COUNT or ayah < 1:
            raise MalformedLine(f"line {lineno}: reference {surah}|{ayah} out of range")
        if last is not None and (surah < last[0] or (surah == last[0] and ayah <= last[1])):
            raise NonMonotoneOrdering(f"line {lineno}: {surah}|{ayah} after {last[0]}|{last[1]}")
        last = (surah, ayah)
        ayahs.append(CorpusUnit(UnitKind.AYAH, surah, ayah, fields[2]))
        by_surah.setdefault(surah, []).append(fields[2])

    surahs = [CorpusUnit(UnitKind.SURAH, no, None, " ".join(texts)) for no, texts in by_surah.items()]
    full = CorpusUnit(UnitKind.FULL_TEXT, None, None, "".join(s.text + "\n" for s in surahs))
    words = [w for unit in ayahs for w in unit.text.split()]
    stats = CorpusStats(len(surahs), len(ayahs), len(words), len(set(words)))
    return ayahs + surahs + [full], stats


def ingest(corpus_file: Union[str, Path]) -> tuple[list[CorpusUnit], CorpusStats]:
    return parse_corpus(Path(corpus_file).read_text(encoding="utf-8"))


@dataclass
class BenchResult:
    unit_kind: UnitKind
    min_ms: float
    max_ms: float
    mean_ms: float
    median_ms: float
    n: int
    digest_consistency: bool

    def to_json(self) -> dict:
        data = asdict(self)
        data["unit_kind"] = self.unit_kind.value
        return data


class BenchMode(str, enum.Enum):
    IN_MEMORY = "in_memory"
    STREAMING = "streaming_from_file"


def _time_ms(fn: Callable[[], Digest], repetitions: int) -> float:
    fn()  # warm-up, not counted
    samples = []
    for _ in range(repetitions):
        start = time.perf_counter_ns()
        fn()
        samples.append((time.perf_counter_ns() - start) / 1e6)
    return statistics.median(samples)


def bench_hash(
    units: list[CorpusUnit],
    repetitions: int,
    mode: Union[BenchMode, str] = BenchMode.IN_MEMORY,
    chunk_size: int = 65536,
) -> dict[UnitKind, BenchResult]:
    """Time digest computation per unit and aggregate per unit kind.

    Each unit's time is the median of ``repetitions`` runs after one warm-up.
    ``min_ms``/``max_ms``/``mean_ms``/``median_ms`` are taken over those
    per-unit medians. Streaming mode reads each unit back from a temporary
    file. Both digests are computed for every unit regardless of mode, and
    ``digest_consistency`` reports whether they agreed.
    """
    mode = BenchMode(mode)
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if not units:
        raise ValueError("no units to benchmark")
    timings: dict[UnitKind, list[float]] = {}
    consistent: dict[UnitKind, bool] = {}
    with tempfile.TemporaryDirectory(prefix="trustyweb-bench-") as tmp:
        for i, unit in enumerate(units):
            data = unit.data
            path = os.path.join(tmp, f"{i}.txt")
            with open(path, "wb") as fh:
                fh.write(data)

            def streamed(path=path) -> Digest:
                with open(path, "rb") as fh:
                    return compute_digest_streaming(fh, chunk_size)

            same = streamed() == compute_digest(data)
            if mode is BenchMode.IN_MEMORY:
                elapsed = _time_ms(lambda data=data: compute_digest(data), repetitions)
            else:
                elapsed = _time_ms(streamed, repetitions)
            timings.setdefault(unit.kind, []).append(elapsed)
            consistent[unit.kind] = consistent.get(unit.kind, True) and same

    return {
        kind: BenchResult(
            kind,
            min(ts),
            max(ts),
            statistics.fmean(ts),
            statistics.median(ts),
            len(ts),
            consistent[kind],
        )
        for kind, ts in timings.items()
    }


@dataclass
class ChunkingResult:
    size: int
    whole_ms: float
    chunked_ms: float
    chunk_size: int
    same_digest: bool

    @property
    def ratio(self) -> float:
        return self.chunked_ms / self.whole_ms if self.whole_ms else float("inf")

    def to_json(self) -> dict:
        data = asdict(self)
        data["ratio"] = self.ratio
        return data


def bench_chunking(data: bytes, chunk_size: int = 1, repetitions: int = 3) -> ChunkingResult:
    """Whole-buffer hashing against tiny-chunk streaming of the same bytes."""
    chunked = compute_digest_streaming(io.BytesIO(data), chunk_size)
    whole_ms = _time_ms(lambda: compute_digest(data), repetitions)
    chunked_ms = _time_ms(lambda: compute_digest_streaming(io.BytesIO(data), chunk_size), repetitions)
    return ChunkingResult(len(data), whole_ms, chunked_ms, chunk_size, chunked == compute_digest(data))


def format_table(results: dict[UnitKind, BenchResult]) -> str:
    rows = [("kind", "n", "min ms", "median ms", "mean ms", "max ms", "digests")]
    for kind in UnitKind:
        if kind in results:
            r = results[kind]
            rows.append(
                (
                    kind.value,
                    str(r.n),
                    f"{r.min_ms:.6f}",
                    f"{r.median_ms:.6f}",
                    f"{r.mean_ms:.6f}",
                    f"{r.max_ms:.6f}",
                    "same" if r.digest_consistency else "DIFFER",
                )
            )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows)


@dataclass
class PublishSummary:
    units: int = 0
    created: int = 0
    existing: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "units": self.units,
            "created": self.created,
            "existing": self.existing,
            "errors": [{"unit": u, "error": e} for u, e in self.errors],
        }


def publish_corpus(units: list[CorpusUnit], store, author: str = "corpus") -> PublishSummary:
    """Publish every unit as UTF-8 text, chained ayah -> surah -> full text -> root.

    ``store`` needs ``publish(content, author, media_type, parent)`` returning
    ``(record, created)``, as :class:`~trustyweb.store.StoreClient` does.
    Identical texts collapse into one record (publish-once), so the number of
    records created can be smaller than the number of units.
    """
    summary = PublishSummary()
    ordered = sorted(units, key=lambda u: [UnitKind.FULL_TEXT, UnitKind.SURAH, UnitKind.AYAH].index(u.kind))
    surah_uris: dict[int, TrustyUri] = {}
    full_uri: Optional[TrustyUri] = None
    for unit in ordered:
        if unit.kind is UnitKind.FULL_TEXT:
            parent = None
        elif unit.kind is UnitKind.SURAH:
            parent = full_uri
        else:
            parent = surah_uris.get(unit.surah_no)
        summary.units += 1
        try:
            record, created = store.publish(unit.data, author, TEXT_PLAIN, parent)
        except Exception as exc:  # reported per unit, never aborts the run
            summary.errors.append((unit.label, str(exc)))
            continue
        if created:
            summary.created += 1
        else:
            summary.existing += 1
        if unit.kind is UnitKind.FULL_TEXT:
            full_uri = record.uri
        elif unit.kind is UnitKind.SURAH:
            surah_uris[unit.surah_no] = record.uri
    return summary
