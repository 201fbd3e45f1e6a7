"""Measurement corpus ingestion: schemas, streaming parsers, serializers.

Three record streams (NDJSON speed-test sessions, NDJSON traceroutes, and
whitespace-separated AS-path lines) plus four side tables (operator catalog,
ASN registry, PoP locations, reverse DNS). Parsers are streaming and
line-oriented: under the default lenient policy a malformed line is reported
as a RecordError value and parsing continues; under the strict policy the
first malformed line raises.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from datetime import datetime
from ipaddress import IPv4Address, IPv6Address, ip_address
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, TextIO, Union

from .catalog import ORBITS, SnoCatalog, SnoEntry
from .util import format_rfc3339, parse_rfc3339

STRICTNESS_LENIENT = "lenient"
STRICTNESS_STRICT = "strict"

DIRECTION_DOWNLOAD = "download"

# Marker for an unresponsive traceroute hop reply.
UNRESPONSIVE = "*"

IPAddress = Union[IPv4Address, IPv6Address]

Source = Union[str, Path, TextIO, Iterable[Union[str, bytes]]]


class RecordError(Exception):
    """A malformed input line: where it was and why it was rejected."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RecordError)
            and (self.line_no, self.reason) == (other.line_no, other.reason)
        )

    def __hash__(self) -> int:
        return hash((self.line_no, self.reason))


class TableError(ValueError):
    """A malformed side table (catalog, registry, PoP table, or rDNS map)."""


@dataclass(slots=True)
class TcpSnapshot:
    """One in-flight TCP poll: cumulative counters and instantaneous RTT state."""

    t_offset_ms: float
    rtt_ms: float
    rtt_var_ms: float
    bytes_sent: int
    bytes_retrans: int
    delivery_rate_bps: float | None = None


@dataclass(slots=True)
class SpeedTestSession:
    """One download measurement: client identity plus its snapshot series."""

    session_id: str
    timestamp: datetime
    client_ip: IPAddress
    client_asn: int
    direction: str
    snapshots: list[TcpSnapshot]


@dataclass(slots=True)
class HopReply:
    """A single reply at one hop; ip None means the probe went unanswered."""

    ip: IPAddress | None
    rtt_ms: float | None

    @property
    def responsive(self) -> bool:
        return self.ip is not None


@dataclass(slots=True)
class Hop:
    hop_no: int
    replies: list[HopReply]


@dataclass(slots=True)
class TracerouteMeasurement:
    probe_id: int
    timestamp: datetime
    src_addr: IPAddress
    dst_name: str
    dst_addr: IPAddress
    hops: list[Hop]


@dataclass(slots=True)
class AsPathRecord:
    """One observed BGP path, most distant AS first, prepends collapsed."""

    observed_at: datetime
    as_path: list[int]


@dataclass(frozen=True)
class PopLocation:
    code: str
    city: str
    country_code: str
    lat: float
    lon: float


# ---------------------------------------------------------------------------
# line iteration


def _iter_lines(source: Source) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, decoded line) from a path, file, or iterable."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from enumerate(handle, start=1)
        return
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    lines: Iterable[str | bytes]
    if hasattr(source, "read"):
        lines = source  # type: ignore[assignment]
    else:
        lines = source
    for line_no, raw in enumerate(lines, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", errors="replace")
        yield line_no, raw


def _check_strictness(strictness: str) -> None:
    if strictness not in (STRICTNESS_LENIENT, STRICTNESS_STRICT):
        raise ValueError(f"unknown strictness {strictness!r}")


# ---------------------------------------------------------------------------
# field validators


def _require(obj: Mapping[str, Any], key: str) -> Any:
    if key not in obj:
        raise ValueError(f"missing field {key!r}")
    return obj[key]


def _as_str(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValueError(f"{name} must be a non-empty string")
    return value


def _as_int(value: Any, name: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer")
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def _as_number(value: Any, name: str, minimum: float | None = None, strict_min: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number")
    out = float(value)
    if not math.isfinite(out):
        raise ValueError(f"{name} must be finite")
    if minimum is not None:
        if strict_min and out <= minimum:
            raise ValueError(f"{name} must be > {minimum}, got {out}")
        if not strict_min and out < minimum:
            raise ValueError(f"{name} must be >= {minimum}, got {out}")
    return out


def _as_ip(value: Any, name: str) -> IPAddress:
    text = _as_str(value, name)
    try:
        return ip_address(text)
    except ValueError:
        raise ValueError(f"{name} is not an IP address: {text!r}") from None


def _as_timestamp(value: Any, name: str = "timestamp") -> datetime:
    return parse_rfc3339(_as_str(value, name))


# ---------------------------------------------------------------------------
# speed-test sessions


def _snapshot_from_obj(obj: Any, index: int) -> TcpSnapshot:
    if not isinstance(obj, dict):
        raise ValueError(f"snapshot {index} must be an object")
    where = f"snapshot {index}"
    snap = TcpSnapshot(
        t_offset_ms=_as_number(_require(obj, "t_offset_ms"), f"{where} t_offset_ms", minimum=0.0),
        rtt_ms=_as_number(_require(obj, "rtt_ms"), f"{where} rtt_ms", minimum=0.0, strict_min=True),
        rtt_var_ms=_as_number(_require(obj, "rtt_var_ms"), f"{where} rtt_var_ms", minimum=0.0),
        bytes_sent=_as_int(_require(obj, "bytes_sent"), f"{where} bytes_sent", minimum=0),
        bytes_retrans=_as_int(_require(obj, "bytes_retrans"), f"{where} bytes_retrans", minimum=0),
        delivery_rate_bps=(
            _as_number(obj["delivery_rate_bps"], f"{where} delivery_rate_bps", minimum=0.0)
            if obj.get("delivery_rate_bps") is not None
            else None
        ),
    )
    if snap.bytes_retrans > snap.bytes_sent:
        raise ValueError(f"{where} bytes_retrans exceeds bytes_sent")
    return snap


def session_from_dict(obj: Any) -> SpeedTestSession:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    direction = _as_str(_require(obj, "direction"), "direction")
    if direction != DIRECTION_DOWNLOAD:
        raise ValueError(f"unsupported direction {direction!r}")
    raw_snaps = _require(obj, "snapshots")
    if not isinstance(raw_snaps, list) or not raw_snaps:
        raise ValueError("snapshots must be a non-empty array")
    snapshots = [_snapshot_from_obj(snap, i) for i, snap in enumerate(raw_snaps)]
    for prev, cur in zip(snapshots, snapshots[1:]):
        if cur.t_offset_ms <= prev.t_offset_ms:
            raise ValueError("snapshot t_offset_ms must be strictly increasing")
        if cur.bytes_sent < prev.bytes_sent:
            raise ValueError("bytes_sent must be non-decreasing")
        if cur.bytes_retrans < prev.bytes_retrans:
            raise ValueError("bytes_retrans must be non-decreasing")
    return SpeedTestSession(
        session_id=_as_str(_require(obj, "session_id"), "session_id"),
        timestamp=_as_timestamp(_require(obj, "timestamp")),
        client_ip=_as_ip(_require(obj, "client_ip"), "client_ip"),
        client_asn=_as_int(_require(obj, "client_asn"), "client_asn", minimum=1),
        direction=direction,
        snapshots=snapshots,
    )


def _parse_ndjson_stream(
    source: Source,
    builder: Callable[[Any], Any],
    strictness: str,
) -> Iterator[Any]:
    _check_strictness(strictness)
    for line_no, line in _iter_lines(source):
        if not line.strip():
            continue
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"invalid JSON: {exc.msg}") from None
            yield builder(obj)
        except ValueError as exc:
            err = RecordError(line_no, str(exc))
            if strictness == STRICTNESS_STRICT:
                raise err from None
            yield err


def parse_speedtest_stream(source: Source, strictness: str = STRICTNESS_LENIENT) -> Iterator[SpeedTestSession | RecordError]:
    """Stream speed-test sessions from NDJSON; see module docstring for policy."""
    return _parse_ndjson_stream(source, session_from_dict, strictness)


def snapshot_to_dict(snap: TcpSnapshot) -> dict[str, Any]:
    out: dict[str, Any] = {
        "t_offset_ms": snap.t_offset_ms,
        "rtt_ms": snap.rtt_ms,
        "rtt_var_ms": snap.rtt_var_ms,
        "bytes_sent": snap.bytes_sent,
        "bytes_retrans": snap.bytes_retrans,
    }
    if snap.delivery_rate_bps is not None:
        out["delivery_rate_bps"] = snap.delivery_rate_bps
    return out


def session_to_dict(session: SpeedTestSession) -> dict[str, Any]:
    return {
        "session_id": session.session_id,
        "timestamp": format_rfc3339(session.timestamp),
        "client_ip": str(session.client_ip),
        "client_asn": session.client_asn,
        "direction": session.direction,
        "snapshots": [snapshot_to_dict(s) for s in session.snapshots],
    }


def session_to_json(session: SpeedTestSession) -> str:
    return json.dumps(session_to_dict(session), separators=(",", ":"))


# ---------------------------------------------------------------------------
# traceroutes


def _reply_from_obj(obj: Any, where: str) -> HopReply:
    if not isinstance(obj, dict):
        raise ValueError(f"{where} reply must be an object")
    raw_ip = _require(obj, "ip")
    if raw_ip == UNRESPONSIVE:
        if obj.get("rtt_ms") is not None:
            raise ValueError(f"{where} unresponsive reply cannot carry rtt_ms")
        return HopReply(ip=None, rtt_ms=None)
    return HopReply(
        ip=_as_ip(raw_ip, f"{where} ip"),
        rtt_ms=_as_number(_require(obj, "rtt_ms"), f"{where} rtt_ms", minimum=0.0),
    )


def traceroute_from_dict(obj: Any) -> TracerouteMeasurement:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    raw_hops = _require(obj, "hops")
    if not isinstance(raw_hops, list) or not raw_hops:
        raise ValueError("hops must be a non-empty array")
    hops: list[Hop] = []
    for i, raw_hop in enumerate(raw_hops):
        if not isinstance(raw_hop, dict):
            raise ValueError(f"hop {i} must be an object")
        hop_no = _as_int(_require(raw_hop, "hop_no"), f"hop {i} hop_no", minimum=1)
        raw_replies = _require(raw_hop, "replies")
        if not isinstance(raw_replies, list) or not raw_replies:
            raise ValueError(f"hop {i} replies must be a non-empty array")
        replies = [_reply_from_obj(r, f"hop {i}") for r in raw_replies]
        hops.append(Hop(hop_no=hop_no, replies=replies))
    for prev, cur in zip(hops, hops[1:]):
        if cur.hop_no <= prev.hop_no:
            raise ValueError("hop_no must be strictly increasing")
    return TracerouteMeasurement(
        probe_id=_as_int(_require(obj, "probe_id"), "probe_id", minimum=0),
        timestamp=_as_timestamp(_require(obj, "timestamp")),
        src_addr=_as_ip(_require(obj, "src_addr"), "src_addr"),
        dst_name=_as_str(_require(obj, "dst_name"), "dst_name"),
        dst_addr=_as_ip(_require(obj, "dst_addr"), "dst_addr"),
        hops=hops,
    )


def parse_traceroute_stream(source: Source, strictness: str = STRICTNESS_LENIENT) -> Iterator[TracerouteMeasurement | RecordError]:
    return _parse_ndjson_stream(source, traceroute_from_dict, strictness)


def traceroute_to_dict(m: TracerouteMeasurement) -> dict[str, Any]:
    hops = []
    for hop in m.hops:
        replies = []
        for reply in hop.replies:
            if reply.ip is None:
                replies.append({"ip": UNRESPONSIVE})
            else:
                replies.append({"ip": str(reply.ip), "rtt_ms": reply.rtt_ms})
        hops.append({"hop_no": hop.hop_no, "replies": replies})
    return {
        "probe_id": m.probe_id,
        "timestamp": format_rfc3339(m.timestamp),
        "src_addr": str(m.src_addr),
        "dst_name": m.dst_name,
        "dst_addr": str(m.dst_addr),
        "hops": hops,
    }


def traceroute_to_json(m: TracerouteMeasurement) -> str:
    return json.dumps(traceroute_to_dict(m), separators=(",", ":"))


# ---------------------------------------------------------------------------
# AS paths


def aspath_from_line(line: str) -> AsPathRecord:
    tokens = line.split()
    if len(tokens) < 2:
        raise ValueError("expected '<timestamp> <asn> [<asn> ...]'")
    observed_at = parse_rfc3339(tokens[0])
    path: list[int] = []
    for tok in tokens[1:]:
        if not tok.isdigit():
            raise ValueError(f"non-numeric ASN token {tok!r}")
        asn = int(tok)
        if asn < 1:
            raise ValueError(f"ASN must be positive, got {asn}")
        # Collapse consecutive repeats: path prepending is not adjacency.
        if not path or path[-1] != asn:
            path.append(asn)
    return AsPathRecord(observed_at=observed_at, as_path=path)


def parse_aspath_stream(source: Source, strictness: str = STRICTNESS_LENIENT) -> Iterator[AsPathRecord | RecordError]:
    _check_strictness(strictness)
    for line_no, line in _iter_lines(source):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            yield aspath_from_line(stripped)
        except ValueError as exc:
            err = RecordError(line_no, str(exc))
            if strictness == STRICTNESS_STRICT:
                raise err from None
            yield err


def aspath_to_line(rec: AsPathRecord) -> str:
    return " ".join([format_rfc3339(rec.observed_at)] + [str(a) for a in rec.as_path])


# ---------------------------------------------------------------------------
# side tables


def parse_catalog(source: Source) -> SnoCatalog:
    """Load the operator catalog from a JSON array of entry objects."""
    text = _read_all(source)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TableError(f"catalog is not valid JSON: {exc.msg}") from None
    if not isinstance(raw, list):
        raise TableError("catalog must be a JSON array")
    entries = []
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict):
            raise TableError(f"catalog entry {i} must be an object")
        try:
            name = _as_str(_require(obj, "name"), "name")
            raw_asns = _require(obj, "asns")
            if not isinstance(raw_asns, list) or not raw_asns:
                raise ValueError("asns must be a non-empty array")
            asns = frozenset(_as_int(a, "asn", minimum=1) for a in raw_asns)
            raw_orbits = _require(obj, "orbits")
            if not isinstance(raw_orbits, list) or not raw_orbits:
                raise ValueError("orbits must be a non-empty array")
            for orbit in raw_orbits:
                if orbit not in ORBITS:
                    raise ValueError(f"unknown orbit token {orbit!r}")
            pep = obj.get("pep", False)
            if not isinstance(pep, bool):
                raise ValueError("pep must be a boolean")
            raw_excluded = obj.get("excluded_asns", [])
            if not isinstance(raw_excluded, list):
                raise ValueError("excluded_asns must be an array")
            excluded = frozenset(_as_int(a, "excluded asn", minimum=1) for a in raw_excluded)
            entries.append(SnoEntry(name, asns, frozenset(raw_orbits), pep, excluded))
        except ValueError as exc:
            raise TableError(f"catalog entry {i}: {exc}") from None
    return SnoCatalog(entries)


def _read_all(source: Source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    if hasattr(source, "read"):
        data = source.read()  # type: ignore[union-attr]
        return data.decode("utf-8") if isinstance(data, bytes) else data
    parts = []
    for chunk in source:
        parts.append(chunk.decode("utf-8") if isinstance(chunk, bytes) else chunk)
    return "".join(parts)


def _csv_rows(source: Source, header: tuple[str, ...]) -> Iterator[tuple[int, list[str]]]:
    text = _read_all(source)
    reader = csv.reader(io.StringIO(text))
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if line_no == 1 and tuple(c.lower() for c in cells) == header:
            continue
        if len(cells) != len(header):
            raise TableError(f"row {line_no}: expected {len(header)} columns, got {len(cells)}")
        yield line_no, cells


def parse_registry(source: Source) -> dict[int, str]:
    """Load ASN -> ISO country code assignments from CSV (asn,country_code)."""
    out: dict[int, str] = {}
    for line_no, cells in _csv_rows(source, ("asn", "country_code")):
        raw_asn, raw_cc = cells
        if not raw_asn.isdigit() or int(raw_asn) < 1:
            raise TableError(f"row {line_no}: bad ASN {raw_asn!r}")
        cc = raw_cc.upper()
        if len(cc) != 2 or not cc.isalpha():
            raise TableError(f"row {line_no}: bad country code {raw_cc!r}")
        asn = int(raw_asn)
        if asn in out and out[asn] != cc:
            raise TableError(f"row {line_no}: AS{asn} mapped to both {out[asn]} and {cc}")
        out[asn] = cc
    return out


def parse_pop_table(source: Source) -> dict[str, PopLocation]:
    """Load PoP code -> location rows from CSV (code,city,country_code,lat,lon)."""
    out: dict[str, PopLocation] = {}
    for line_no, cells in _csv_rows(source, ("code", "city", "country_code", "lat", "lon")):
        code, city, raw_cc, raw_lat, raw_lon = cells
        code = code.lower()
        if not code:
            raise TableError(f"row {line_no}: empty PoP code")
        cc = raw_cc.upper()
        if len(cc) != 2 or not cc.isalpha():
            raise TableError(f"row {line_no}: bad country code {raw_cc!r}")
        try:
            lat, lon = float(raw_lat), float(raw_lon)
        except ValueError:
            raise TableError(f"row {line_no}: bad coordinates {raw_lat!r},{raw_lon!r}") from None
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise TableError(f"row {line_no}: coordinates out of range")
        loc = PopLocation(code, city, cc, lat, lon)
        if code in out and out[code] != loc:
            raise TableError(f"row {line_no}: conflicting rows for PoP {code!r}")
        out[code] = loc
    return out


def parse_rdns(source: Source) -> dict[str, str]:
    """Load IP -> hostname rows from CSV (ip,hostname); keys are normalized IPs."""
    out: dict[str, str] = {}
    for line_no, cells in _csv_rows(source, ("ip", "hostname")):
        raw_ip, raw_host = cells
        try:
            ip = str(ip_address(raw_ip))
        except ValueError:
            raise TableError(f"row {line_no}: bad IP {raw_ip!r}") from None
        host = raw_host.lower().rstrip(".")
        if not host:
            raise TableError(f"row {line_no}: empty hostname")
        if ip in out and out[ip] != host:
            raise TableError(f"row {line_no}: conflicting hostnames for {ip}")
        out[ip] = host
    return out


def parse_tables(
    catalog_source: Source,
    registry_source: Source,
    pop_table_source: Source,
    rdns_source: Source,
) -> tuple[SnoCatalog, dict[int, str], dict[str, PopLocation], dict[str, str]]:
    """Parse all four side tables; any malformed row raises TableError."""
    return (
        parse_catalog(catalog_source),
        parse_registry(registry_source),
        parse_pop_table(pop_table_source),
        parse_rdns(rdns_source),
    )
