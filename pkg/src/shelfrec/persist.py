"""Versioned persistence for pipeline state.

The archive is a single self-describing JSON envelope whose collections
mirror the external CSV/JSON column layouts, so a saved state can be
inspected and diffed with ordinary text tools. load(save(x)) is an exact
round trip, and re-serializing a loaded state is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .ingest import SalesRecord, format_timestamp, parse_timestamp

FORMAT_VERSION = 1


class ArchiveError(ValueError):
    pass


class ArchiveVersionError(ArchiveError):
    def __init__(self, found, expected=FORMAT_VERSION):
        super().__init__(f"archive version {found} is not supported (expected {expected})")
        self.found = found
        self.expected = expected


@dataclass
class PipelineState:
    """Any subset of artifacts produced along the pipeline."""

    sales_records: list[SalesRecord] | None = None
    membership: dict | None = None        # geocluster.MembershipMatrix.to_dict()
    profiles: dict[str, list[float]] | None = None
    clusters: dict | None = None          # geocluster.ClusterAssignment.to_dict()
    posterior: dict | None = None         # reward.RbpPosterior.to_dict()
    graph: dict | None = None             # candidates.CoOccurrenceGraph.to_dict()
    extras: dict = field(default_factory=dict)


def _sales_to_rows(records: list[SalesRecord]) -> list[dict]:
    return [
        {
            "store_id": r.store_id,
            "display_id": r.display_id,
            "product_id": r.product_id,
            "interval_end": format_timestamp(r.interval_end),
            "timedelta_hours": r.timedelta_hours,
            "quantity_faced": r.quantity_faced,
            "units_sold": r.units_sold,
            "clamped": r.clamped,
        }
        for r in records
    ]


def _sales_from_rows(rows: list[dict]) -> list[SalesRecord]:
    return [
        SalesRecord(
            store_id=row["store_id"],
            display_id=row["display_id"],
            product_id=row["product_id"],
            interval_end=parse_timestamp(row["interval_end"]),
            timedelta_hours=row["timedelta_hours"],
            quantity_faced=row["quantity_faced"],
            units_sold=row["units_sold"],
            clamped=row["clamped"],
        )
        for row in rows
    ]


def state_to_json(state: PipelineState) -> str:
    collections = {}
    if state.sales_records is not None:
        collections["sales_records"] = _sales_to_rows(state.sales_records)
    for name in ("membership", "profiles", "clusters", "posterior", "graph"):
        value = getattr(state, name)
        if value is not None:
            collections[name] = value
    if state.extras:
        collections["extras"] = state.extras
    envelope = {"format": "shelfrec-state", "version": FORMAT_VERSION, "collections": collections}
    return json.dumps(envelope, sort_keys=True, separators=(",", ":")) + "\n"


def state_from_json(text: str) -> PipelineState:
    try:
        envelope = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"truncated or malformed archive: {exc}") from exc
    if not isinstance(envelope, dict) or envelope.get("format") != "shelfrec-state":
        raise ArchiveError("not a shelfrec state archive")
    version = envelope.get("version")
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(version)
    collections = envelope.get("collections", {})
    state = PipelineState()
    if "sales_records" in collections:
        state.sales_records = _sales_from_rows(collections["sales_records"])
    for name in ("membership", "profiles", "clusters", "posterior", "graph"):
        if name in collections:
            setattr(state, name, collections[name])
    state.extras = collections.get("extras", {})
    return state


def save_state(state: PipelineState, path) -> None:
    Path(path).write_text(state_to_json(state))


def load_state(path) -> PipelineState:
    return state_from_json(Path(path).read_text())
