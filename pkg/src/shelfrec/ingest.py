"""Scan-log ingestion: parse count snapshots, difference them into sales
observations, and load product catalogs and tract demographic tables.

All readers are line-oriented CSV. Bad rows never abort a parse; they are
collected into the result's error list with their line number and reason.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Mapping

SUB_CATEGORIES = ("Sparkling", "Water", "Isotonic", "Rejuvenate", "Energy")

SCAN_LOG_HEADER = ["store_id", "display_id", "scanned_datetime", "phase", "product_id", "count"]
SALES_HEADER = [
    "store_id", "display_id", "product_id", "interval_end",
    "timedelta_hours", "quantity_faced", "units_sold", "clamped",
]
CATALOG_HEADER = ["product_id", "name", "sub_category", "height_mm", "width_mm"]


class Phase(str, Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class ScanEvent:
    store_id: str
    display_id: str
    visit_index: int
    timestamp: datetime
    phase: Phase
    counts: Mapping[str, int]


@dataclass(frozen=True)
class SalesRecord:
    store_id: str
    display_id: str
    product_id: str
    interval_end: datetime
    timedelta_hours: float
    quantity_faced: int
    units_sold: float
    clamped: bool


@dataclass(frozen=True)
class Product:
    product_id: str
    name: str
    sub_category: str
    height_mm: float
    width_mm: float


@dataclass(frozen=True)
class Tract:
    tract_id: str
    lat: float
    lon: float
    demographics: tuple[float, ...]


@dataclass(frozen=True)
class RowError:
    line: int
    reason: str
    raw: str


@dataclass
class ParseResult:
    """Valid records plus per-row errors and non-fatal warnings."""

    events: list = field(default_factory=list)
    errors: list[RowError] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime."""
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat()


def _open_rows(source) -> Iterable[dict]:
    if isinstance(source, str) and "\n" not in source:
        with open(source, newline="") as fh:
            yield from csv.DictReader(fh)
        return
    if isinstance(source, str):
        source = io.StringIO(source)
    yield from csv.DictReader(source)


def parse_scan_log(source) -> ParseResult:
    """Parse a scan log (path, text, or file object) into ScanEvents.

    Rows belonging to the same (display, timestamp, phase) form one scan
    snapshot. Snapshots are ordered by timestamp per display; a pre scan
    opens a visit and the next post scan at or after it closes the visit.
    Visit indices count up from 0 in timestamp order.
    """
    result = ParseResult()
    # (display_id, timestamp, phase) -> {"store": ..., "counts": {...}}
    snapshots: dict[tuple, dict] = {}
    for line_no, row in enumerate(_open_rows(source), start=2):
        raw = ",".join(str(v) for v in row.values() if v is not None)
        try:
            store = (row["store_id"] or "").strip()
            display = (row["display_id"] or "").strip()
            product = (row["product_id"] or "").strip()
            if not store or not display or not product:
                raise ValueError("missing identifier")
            ts = parse_timestamp(row["scanned_datetime"].strip())
            phase = Phase(row["phase"].strip().lower())
            count = int(row["count"])
        except (KeyError, TypeError, AttributeError):
            result.errors.append(RowError(line_no, "missing column", raw))
            continue
        except ValueError as exc:
            result.errors.append(RowError(line_no, str(exc) or "unparseable row", raw))
            continue
        if count < 0:
            result.errors.append(RowError(line_no, f"negative count {count}", raw))
            continue
        key = (display, ts, phase)
        snap = snapshots.setdefault(key, {"store": store, "counts": {}})
        if product in snap["counts"]:
            result.errors.append(
                RowError(line_no, f"duplicate product {product} in {phase.value} scan", raw)
            )
            continue
        snap["counts"][product] = count

    by_display: dict[str, list] = {}
    for (display, ts, phase), snap in snapshots.items():
        by_display.setdefault(display, []).append((ts, phase, snap))

    for display in sorted(by_display):
        # pre sorts ahead of post at an identical timestamp
        scans = sorted(by_display[display], key=lambda s: (s[0], s[1] is Phase.POST))
        visit = -1
        open_pre = False
        for ts, phase, snap in scans:
            if phase is Phase.PRE:
                visit += 1
                open_pre = True
            else:
                if not open_pre:
                    visit += 1
                open_pre = False
            result.events.append(
                ScanEvent(
                    store_id=snap["store"],
                    display_id=display,
                    visit_index=visit,
                    timestamp=ts,
                    phase=phase,
                    counts=dict(snap["counts"]),
                )
            )
    return result


@dataclass
class SalesResult:
    records: list[SalesRecord] = field(default_factory=list)
    skipped_visits: int = 0
    skipped_intervals: list[str] = field(default_factory=list)


def derive_sales(events: Iterable[ScanEvent], depth: int | Mapping[str, int] = 1) -> SalesResult:
    """Difference consecutive visit scans into per-product sales observations.

    For each display and consecutive visit pair (v-1, v), every product in
    the post scan of v-1 yields one record with
    ``units_sold = max(0, post_count(v-1) - pre_count(v))`` (absent products
    count as 0 at the pre scan). Negative raw differences are clamped to 0
    and flagged. ``depth`` is the facing-depth divisor mapping counts to
    facings, either global or per display.
    """
    def depth_for(display: str) -> int:
        d = depth[display] if isinstance(depth, Mapping) else depth
        if d < 1:
            raise ValueError(f"facing depth must be >= 1, got {d}")
        return d

    out = SalesResult()
    visits: dict[str, dict[int, dict[Phase, ScanEvent]]] = {}
    for ev in events:
        visits.setdefault(ev.display_id, {}).setdefault(ev.visit_index, {})[ev.phase] = ev

    for display in sorted(visits):
        complete = []
        for vidx in sorted(visits[display]):
            pair = visits[display][vidx]
            if Phase.PRE in pair and Phase.POST in pair:
                complete.append((vidx, pair[Phase.PRE], pair[Phase.POST]))
            else:
                out.skipped_visits += 1
        d = depth_for(display)
        for (_, _, post_prev), (_, pre_cur, _) in zip(complete, complete[1:]):
            delta_hours = (pre_cur.timestamp - post_prev.timestamp).total_seconds() / 3600.0
            if delta_hours <= 0:
                out.skipped_intervals.append(
                    f"{display}: non-positive interval at {format_timestamp(pre_cur.timestamp)}"
                )
                continue
            for product in sorted(post_prev.counts):
                start_count = post_prev.counts[product]
                if start_count <= 0:
                    continue
                raw = start_count - pre_cur.counts.get(product, 0)
                out.records.append(
                    SalesRecord(
                        store_id=post_prev.store_id,
                        display_id=display,
                        product_id=product,
                        interval_end=pre_cur.timestamp,
                        timedelta_hours=delta_hours,
                        quantity_faced=math.ceil(start_count / d),
                        units_sold=float(max(0, raw)),
                        clamped=raw < 0,
                    )
                )
    return out


def load_catalog(source) -> ParseResult:
    """Load a product catalog CSV; result.events holds Product records."""
    result = ParseResult()
    for line_no, row in enumerate(_open_rows(source), start=2):
        raw = ",".join(str(v) for v in row.values() if v is not None)
        try:
            product_id = row["product_id"].strip()
            name = row["name"].strip()
            sub_category = row["sub_category"].strip()
            height = float(row["height_mm"])
            width = float(row["width_mm"])
        except (KeyError, TypeError, ValueError, AttributeError):
            result.errors.append(RowError(line_no, "unparseable row", raw))
            continue
        if sub_category not in SUB_CATEGORIES:
            result.errors.append(RowError(line_no, f"unknown sub-category {sub_category!r}", raw))
            continue
        if height <= 0 or width <= 0:
            result.errors.append(RowError(line_no, "non-positive dimension", raw))
            continue
        result.events.append(Product(product_id, name, sub_category, height, width))
    return result


def load_tracts(source, n_demographics: int | None = None) -> ParseResult:
    """Load a tract table CSV; demographic columns are detected by the d prefix.

    ``n_demographics`` pins the expected vector length; rows with a different
    length become row errors. When omitted, the first valid row sets it.
    """
    result = ParseResult()
    expected = n_demographics
    for line_no, row in enumerate(_open_rows(source), start=2):
        raw = ",".join(str(v) for v in row.values() if v is not None)
        demo_cols = sorted(c for c in row if c and c.startswith("d") and c[1:].isdigit())
        try:
            tract_id = row["tract_id"].strip()
            lat = float(row["lat"])
            lon = float(row["lon"])
            demo = tuple(float(row[c]) for c in demo_cols)
        except (KeyError, TypeError, ValueError, AttributeError):
            result.errors.append(RowError(line_no, "unparseable row", raw))
            continue
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            result.errors.append(RowError(line_no, "coordinates out of range", raw))
            continue
        if expected is None:
            expected = len(demo)
        if len(demo) != expected:
            result.errors.append(
                RowError(line_no, f"expected {expected} demographic columns, got {len(demo)}", raw)
            )
            continue
        result.events.append(Tract(tract_id, lat, lon, demo))
    return result


def sales_to_csv(records: Iterable[SalesRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SALES_HEADER)
    for r in records:
        writer.writerow([
            r.store_id, r.display_id, r.product_id, format_timestamp(r.interval_end),
            repr(r.timedelta_hours), r.quantity_faced, repr(r.units_sold),
            "true" if r.clamped else "false",
        ])
    return buf.getvalue()


def sales_from_csv(source) -> list[SalesRecord]:
    records = []
    for row in _open_rows(source):
        records.append(
            SalesRecord(
                store_id=row["store_id"],
                display_id=row["display_id"],
                product_id=row["product_id"],
                interval_end=parse_timestamp(row["interval_end"]),
                timedelta_hours=float(row["timedelta_hours"]),
                quantity_faced=int(row["quantity_faced"]),
                units_sold=float(row["units_sold"]),
                clamped=row["clamped"] == "true",
            )
        )
    return records


def catalog_to_csv(products: Iterable[Product]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CATALOG_HEADER)
    for p in products:
        writer.writerow([p.product_id, p.name, p.sub_category, repr(p.height_mm), repr(p.width_mm)])
    return buf.getvalue()


def tracts_to_csv(tracts: Iterable[Tract]) -> str:
    tracts = list(tracts)
    width = len(tracts[0].demographics) if tracts else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["tract_id", "lat", "lon"] + [f"d{i:02d}" for i in range(width)])
    for t in tracts:
        writer.writerow([t.tract_id, repr(t.lat), repr(t.lon)] + [repr(v) for v in t.demographics])
    return buf.getvalue()
