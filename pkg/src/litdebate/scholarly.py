"""Client for a scholarly-index works endpoint (OpenAlex-compatible).

Applies the temporal filter service-side (publication date <= Dec 31 of
the cutoff year) and re-checks it locally, reconstructs inverted-index
abstracts into plain text, and pages through ranked results until the
requested number of works is accumulated.  A fixture transport replays
recorded pages byte-for-byte so every downstream stage runs offline.
"""

from __future__ import annotations

import datetime
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .canonical import digest_payload, normalize_text, read_json, write_json_atomic
from .errors import PageFetchError, ReplayMissError, ValidationError, WorkParseError

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.openalex.org/works"
MAX_SNAPSHOT_WORKS = 500
START_CURSOR = "*"
PAGE_SCHEMA = "page_v1"


@dataclass(frozen=True)
class QuerySpec:
    """A validated keyword search with a hard temporal cutoff."""

    keywords: tuple[str, ...]
    cutoff_year: int
    max_results: int
    ranking: bool = True

    @property
    def search_text(self) -> str:
        return " ".join(self.keywords)

    @property
    def service_filter(self) -> str:
        return f"to_publication_date:{self.cutoff_year}-12-31"

    @property
    def service_sort(self) -> str:
        return "relevance_score:desc"

    def normalized(self) -> dict:
        return {
            "keywords": list(self.keywords),
            "cutoff_year": self.cutoff_year,
            "max_results": self.max_results,
        }


def build_work_query(keywords: Sequence[str], cutoff_year: int, max_results: int) -> QuerySpec:
    """Validate inputs and build a QuerySpec.

    The service-side filter it implies constrains publication date to
    December 31 of ``cutoff_year`` and requests relevance ordering.
    """
    terms = tuple(term.strip() for term in keywords)
    if not terms or any(not term for term in terms):
        raise ValidationError("query keywords must be a nonempty list of nonempty terms")
    if not 1 <= max_results <= MAX_SNAPSHOT_WORKS:
        raise ValidationError(
            f"max_results must be in [1, {MAX_SNAPSHOT_WORKS}], got {max_results}"
        )
    current_year = datetime.date.today().year
    if not 1900 <= cutoff_year <= current_year:
        raise ValidationError(f"cutoff_year must be in [1900, {current_year}], got {cutoff_year}")
    return QuerySpec(keywords=terms, cutoff_year=cutoff_year, max_results=max_results)


def reconstruct_abstract(entries: Mapping[str, Sequence[int]]) -> str:
    """Rebuild plain text from an inverted-index abstract.

    Tokens are placed at their claimed positions and joined by single
    spaces in ascending position order; gaps in the position sequence are
    ignored.  A position claimed by two tokens, a negative position, or a
    non-ascending position list is treated as corrupt data.
    """
    pairs: list[tuple[int, str]] = []
    claimed: dict[int, str] = {}
    for token, positions in entries.items():
        previous = -1
        for position in positions:
            if not isinstance(position, int) or isinstance(position, bool):
                raise WorkParseError(
                    f"non-integer position {position!r} for token {token!r}"
                )
            if position < 0:
                raise WorkParseError(f"negative position {position} for token {token!r}")
            if position <= previous:
                raise WorkParseError(
                    f"positions for token {token!r} are not strictly ascending"
                )
            previous = position
            if position in claimed:
                raise WorkParseError(
                    f"position {position} claimed by both {claimed[position]!r} and {token!r}"
                )
            claimed[position] = token
            pairs.append((position, token))
    pairs.sort()
    return " ".join(token for _, token in pairs)


def invert_abstract(text: str) -> dict[str, list[int]]:
    """Inverse of reconstruct_abstract for whitespace-tokenized text.

    Used by fixture builders and the round-trip property tests.
    """
    entries: dict[str, list[int]] = {}
    for position, token in enumerate(text.split()):
        entries.setdefault(token, []).append(position)
    return entries


@dataclass(frozen=True)
class Work:
    """One retrieved scholarly record with a reconstructed abstract."""

    work_id: str
    title: str
    abstract_text: str
    publication_year: int
    publication_date: str | None
    venue: str | None
    relevance_rank: int

    def to_dict(self) -> dict:
        return {
            "work_id": self.work_id,
            "title": self.title,
            "abstract_text": self.abstract_text,
            "publication_year": self.publication_year,
            "publication_date": self.publication_date,
            "venue": self.venue,
            "relevance_rank": self.relevance_rank,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "Work":
        return cls(
            work_id=payload["work_id"],
            title=payload["title"],
            abstract_text=payload["abstract_text"],
            publication_year=payload["publication_year"],
            publication_date=payload.get("publication_date"),
            venue=payload.get("venue"),
            relevance_rank=payload["relevance_rank"],
        )


@dataclass(frozen=True)
class SkippedRecord:
    """A record excluded from the snapshot, with the reason."""

    reason: str
    work_id: str | None = None


def parse_work(raw: Mapping, rank: int) -> Work | SkippedRecord:
    """Turn one raw service record into a Work, or a skip-with-reason.

    A record without an identifier is a hard parse error; a record
    without an abstract or publication year is skipped (it carries no
    usable evidence).
    """
    work_id = raw.get("id")
    if not work_id:
        raise WorkParseError("record missing identifier")
    year = raw.get("publication_year")
    if year is None:
        return SkippedRecord(reason="no publication year", work_id=work_id)
    inverted = raw.get("abstract_inverted_index")
    if not inverted:
        return SkippedRecord(reason="no abstract", work_id=work_id)
    abstract = normalize_text(reconstruct_abstract(inverted))
    if not abstract.strip():
        return SkippedRecord(reason="empty abstract", work_id=work_id)
    title = raw.get("title") or raw.get("display_name") or ""
    venue = None
    location = raw.get("primary_location")
    if isinstance(location, Mapping):
        source = location.get("source")
        if isinstance(source, Mapping):
            venue = source.get("display_name")
    return Work(
        work_id=work_id,
        title=normalize_text(title),
        abstract_text=abstract,
        publication_year=int(year),
        publication_date=raw.get("publication_date"),
        venue=venue,
        relevance_rank=rank,
    )


def page_key(query: QuerySpec, cursor: str, page_size: int) -> str:
    """Digest keying one recorded page.

    Only what determines the service response goes in: keywords, cutoff,
    page size, cursor.  The client-side max_results does not, so the
    same fixtures serve any snapshot size.
    """
    return digest_payload(
        {
            "keywords": list(query.keywords),
            "cutoff_year": query.cutoff_year,
            "cursor": cursor,
            "page_size": page_size,
        }
    )


def write_fixture_page(
    fixture_dir: str | Path,
    query: QuerySpec,
    cursor: str,
    page_size: int,
    records: list[dict],
    next_cursor: str | None,
    retrieved_at: str,
) -> Path:
    """Persist one service page in the replayable fixture format."""
    doc = {
        "schema": PAGE_SCHEMA,
        "query": query.normalized(),
        "cursor": cursor,
        "page_size": page_size,
        "retrieved_at": retrieved_at,
        "records": records,
        "next_cursor": next_cursor,
    }
    path = Path(fixture_dir) / f"{page_key(query, cursor, page_size)}.json"
    return write_json_atomic(path, doc)


class LiveTransport:
    """Fetches pages from the live works endpoint with polite retries."""

    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        contact_email: str | None = None,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url
        self.contact_email = contact_email
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._session = session or requests.Session()
        self.last_retrieved_at: str | None = None

    def fetch_page(
        self, query: QuerySpec, cursor: str, page_size: int
    ) -> tuple[list[dict], str | None]:
        params = {
            "search": query.search_text,
            "filter": query.service_filter,
            "per-page": page_size,
            "cursor": cursor,
        }
        if query.ranking:
            params["sort"] = query.service_sort
        if self.contact_email:
            params["mailto"] = self.contact_email
        payload = self._get_with_retries(params)
        try:
            records = payload["results"]
            next_cursor = payload.get("meta", {}).get("next_cursor")
        except (TypeError, KeyError) as exc:
            raise PageFetchError(f"malformed page payload: {exc}") from exc
        if not isinstance(records, list):
            raise PageFetchError("malformed page payload: results is not a list")
        self.last_retrieved_at = (
            datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0).isoformat()
        )
        return records, next_cursor

    def _get_with_retries(self, params: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._session.get(self.base_url, params=params, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if response.status_code < 400:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise PageFetchError(f"malformed page payload: {exc}") from exc
                if response.status_code < 500:
                    raise PageFetchError(
                        f"service rejected page request (HTTP {response.status_code})",
                        status=response.status_code,
                    )
                last_error = PageFetchError(
                    f"service error (HTTP {response.status_code})",
                    status=response.status_code,
                )
            if attempt < self.max_retries:
                time.sleep(self.backoff_base * 2**attempt)
        raise PageFetchError(f"page request failed after retries: {last_error}")


class FixtureTransport:
    """Replays recorded pages from a fixture directory; never hits the network."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)
        self.last_retrieved_at: str | None = None

    def fetch_page(
        self, query: QuerySpec, cursor: str, page_size: int
    ) -> tuple[list[dict], str | None]:
        path = self.fixture_dir / f"{page_key(query, cursor, page_size)}.json"
        if not path.exists():
            raise ReplayMissError(
                f"no recorded page for cursor {cursor!r} of query {query.normalized()} "
                f"(page_size {page_size}) under {self.fixture_dir}"
            )
        doc = read_json(path)
        if doc.get("schema") != PAGE_SCHEMA:
            raise PageFetchError(f"{path}: unsupported page schema {doc.get('schema')!r}")
        self.last_retrieved_at = doc.get("retrieved_at")
        return doc["records"], doc.get("next_cursor")


class RecordingTransport:
    """Wraps a live transport and writes every served page to fixtures."""

    def __init__(self, inner: LiveTransport, fixture_dir: str | Path):
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)

    @property
    def last_retrieved_at(self) -> str | None:
        return self.inner.last_retrieved_at

    def fetch_page(
        self, query: QuerySpec, cursor: str, page_size: int
    ) -> tuple[list[dict], str | None]:
        records, next_cursor = self.inner.fetch_page(query, cursor, page_size)
        write_fixture_page(
            self.fixture_dir,
            query,
            cursor,
            page_size,
            records,
            next_cursor,
            retrieved_at=self.inner.last_retrieved_at or "",
        )
        return records, next_cursor


def fetch_page(
    query: QuerySpec, cursor: str, *, transport, page_size: int = 200
) -> tuple[list[dict], str | None]:
    """One ranked service page plus a continuation token (None when done)."""
    return transport.fetch_page(query, cursor, page_size)


def fetch_works(
    query: QuerySpec,
    *,
    transport,
    page_size: int = 200,
    allow_partial: bool = False,
) -> list[Work]:
    """Paginate until max_results works are accumulated or results run out.

    Local guarantees regardless of what the service returned: every work
    satisfies publication_year <= cutoff_year, work_ids are unique, and
    relevance_rank values are contiguous from 1 (skipped records do not
    consume rank slots).  Page failures abort the whole fetch unless the
    caller opted into partial results.
    """
    works: list[Work] = []
    seen_ids: set[str] = set()
    skip_counts: dict[str, int] = {}
    cursor = START_CURSOR
    while True:
        try:
            records, next_cursor = transport.fetch_page(query, cursor, page_size)
        except PageFetchError:
            if allow_partial and works:
                logger.warning(
                    "page fetch failed after %d works; returning partial results", len(works)
                )
                return works
            raise
        for raw in records:
            if len(works) >= query.max_results:
                break
            parsed = parse_work(raw, rank=len(works) + 1)
            if isinstance(parsed, SkippedRecord):
                skip_counts[parsed.reason] = skip_counts.get(parsed.reason, 0) + 1
                continue
            if parsed.publication_year > query.cutoff_year:
                skip_counts["after cutoff"] = skip_counts.get("after cutoff", 0) + 1
                continue
            if parsed.work_id in seen_ids:
                skip_counts["duplicate"] = skip_counts.get("duplicate", 0) + 1
                continue
            seen_ids.add(parsed.work_id)
            works.append(parsed)
        if len(works) >= query.max_results or next_cursor is None:
            break
        cursor = next_cursor
    if skip_counts:
        logger.debug("fetch_works skipped records: %s", skip_counts)
    return works
