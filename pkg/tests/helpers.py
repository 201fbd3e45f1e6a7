"""Shared builders for test fixtures."""

from __future__ import annotations

from datetime import datetime, timezone
from ipaddress import ip_address

from snoscope.ingest import Hop, HopReply, SpeedTestSession, TcpSnapshot, TracerouteMeasurement


def ts(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp


def make_snapshot(
    t_offset_ms: float,
    rtt_ms: float,
    rtt_var_ms: float = 5.0,
    bytes_sent: int = 1_000_000,
    bytes_retrans: int = 0,
    delivery_rate_bps: float | None = None,
) -> TcpSnapshot:
    return TcpSnapshot(
        t_offset_ms=t_offset_ms,
        rtt_ms=rtt_ms,
        rtt_var_ms=rtt_var_ms,
        bytes_sent=bytes_sent,
        bytes_retrans=bytes_retrans,
        delivery_rate_bps=delivery_rate_bps,
    )


def make_session(
    session_id: str = "s-0001",
    rtts: list[float] | None = None,
    rtt_vars: list[float] | None = None,
    client_ip: str = "100.1.2.3",
    client_asn: int = 14593,
    timestamp: str = "2021-03-05T12:00:00Z",
    bytes_sent_final: int = 10_000_000,
    bytes_retrans_final: int = 0,
) -> SpeedTestSession:
    rtts = rtts if rtts is not None else [60.0, 58.0, 57.0, 56.0, 59.0]
    rtt_vars = rtt_vars if rtt_vars is not None else [5.0] * len(rtts)
    if len(rtt_vars) != len(rtts):
        raise ValueError("rtts and rtt_vars must have equal length")
    n = len(rtts)
    snaps = []
    for i, (rtt, var) in enumerate(zip(rtts, rtt_vars)):
        frac = (i + 1) / n
        snaps.append(
            TcpSnapshot(
                t_offset_ms=(i + 1) * 800.0,
                rtt_ms=rtt,
                rtt_var_ms=var,
                bytes_sent=int(bytes_sent_final * frac),
                bytes_retrans=int(bytes_retrans_final * frac),
                delivery_rate_bps=None,
            )
        )
    return SpeedTestSession(
        session_id=session_id,
        timestamp=ts(timestamp),
        client_ip=ip_address(client_ip),
        client_asn=client_asn,
        direction="download",
        snapshots=snaps,
    )


def make_traceroute(
    probe_id: int = 1001,
    timestamp: str = "2022-05-03T00:00:00Z",
    src_addr: str = "98.3.233.10",
    dst_name: str = "k.root-servers.net",
    dst_addr: str = "193.0.14.129",
    gateway_rtts: list[float] | None = None,
    reach_target: bool = True,
    include_gateway: bool = True,
) -> TracerouteMeasurement:
    gateway_rtts = gateway_rtts if gateway_rtts is not None else [53.0, 52.0, 54.0]
    hops = [Hop(hop_no=1, replies=[HopReply(ip=ip_address("192.168.1.1"), rtt_ms=1.5)])]
    if include_gateway:
        hops.append(
            Hop(hop_no=2, replies=[HopReply(ip=ip_address("100.64.0.1"), rtt_ms=r) for r in gateway_rtts])
        )
    hops.append(Hop(hop_no=3, replies=[HopReply(ip=ip_address("206.224.0.1"), rtt_ms=55.0)]))
    if reach_target:
        hops.append(Hop(hop_no=4, replies=[HopReply(ip=ip_address(dst_addr), rtt_ms=60.0)]))
    else:
        hops.append(Hop(hop_no=4, replies=[HopReply(ip=None, rtt_ms=None)]))
    return TracerouteMeasurement(
        probe_id=probe_id,
        timestamp=ts(timestamp),
        src_addr=ip_address(src_addr),
        dst_name=dst_name,
        dst_addr=ip_address(dst_addr),
        hops=hops,
    )
