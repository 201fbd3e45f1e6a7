"""BGP peering graphs as a ground-footprint proxy.

An operator's BGP neighbors reveal where its ground infrastructure touches
the internet: each peer's registry country is a candidate gateway country.
Snapshots of the peering graph can be scored against known PoP locations
and diffed over time to expose transit changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Mapping, Sequence

from .catalog import SnoEntry
from .ingest import AsPathRecord, PopLocation

UNKNOWN_COUNTRY = "ZZ"


@dataclass(frozen=True)
class PeerInfo:
    """One neighbor of the focus ASNs in a snapshot."""

    asn: int
    country_code: str
    degree: int


@dataclass
class PeeringGraph:
    """Neighborhood of one operator's ASNs within a set of observed paths."""

    sno: str
    focus_asns: frozenset[int]
    peers: dict[int, PeerInfo]
    edges: frozenset[tuple[int, int]]
    observed_at: datetime | None


def build_graph(
    paths: Iterable[AsPathRecord],
    entry: SnoEntry,
    registry: Mapping[int, str],
) -> PeeringGraph:
    """Build the peering neighborhood of an operator from observed AS paths.

    Focus ASNs are the operator's subscriber ASNs. Any adjacency on any path
    involving a focus ASN contributes an edge, transit through the operator
    included. Peer degree counts the peer's distinct neighbors across the
    whole snapshot, not only those shared with the operator. Peers missing
    from the registry carry the unknown country "ZZ".
    """
    focus = set(entry.asns)
    neighbors: dict[int, set[int]] = {}
    latest: datetime | None = None
    for record in paths:
        if latest is None or record.observed_at > latest:
            latest = record.observed_at
        for a, b in zip(record.as_path, record.as_path[1:]):
            if a == b:
                continue
            neighbors.setdefault(a, set()).add(b)
            neighbors.setdefault(b, set()).add(a)
    peers: dict[int, PeerInfo] = {}
    edges: set[tuple[int, int]] = set()
    for focus_asn in focus:
        for peer_asn in neighbors.get(focus_asn, ()):  # absent focus ASNs have no edges
            if peer_asn in focus:
                continue
            edges.add((focus_asn, peer_asn))
            if peer_asn not in peers:
                peers[peer_asn] = PeerInfo(
                    asn=peer_asn,
                    country_code=registry.get(peer_asn, UNKNOWN_COUNTRY),
                    degree=len(neighbors[peer_asn]),
                )
    return PeeringGraph(
        sno=entry.name,
        focus_asns=frozenset(focus),
        peers=peers,
        edges=frozenset(edges),
        observed_at=latest,
    )


def infer_countries(graph: PeeringGraph) -> set[str]:
    """Distinct peer countries, the unknown marker excluded."""
    return {p.country_code for p in graph.peers.values() if p.country_code != UNKNOWN_COUNTRY}


@dataclass(frozen=True)
class CoverageScore:
    """How much of a known ground footprint the peering countries explain."""

    country_fraction: float
    city_fraction: float
    inferred_countries: frozenset[str]
    truth_countries: frozenset[str]


def coverage_score(graph: PeeringGraph, ground_truth_pops: Sequence[PopLocation]) -> CoverageScore:
    """Score inferred peer countries against a known PoP list.

    country_fraction is the share of distinct ground-truth countries that
    appear among the peers; city_fraction is the share of PoP rows whose
    country was inferred (a city counts when its country does).
    """
    if not ground_truth_pops:
        raise ValueError("ground truth PoP list is empty")
    inferred = infer_countries(graph)
    truth_countries = {pop.country_code for pop in ground_truth_pops}
    covered_cities = sum(1 for pop in ground_truth_pops if pop.country_code in inferred)
    return CoverageScore(
        country_fraction=len(inferred & truth_countries) / len(truth_countries),
        city_fraction=covered_cities / len(ground_truth_pops),
        inferred_countries=frozenset(inferred),
        truth_countries=frozenset(truth_countries),
    )


@dataclass(frozen=True)
class SnapshotDiff:
    """Peering changes between two snapshots of the same operator."""

    sno: str
    added_peers: frozenset[int]
    removed_peers: frozenset[int]
    added_countries: frozenset[str]
    removed_countries: frozenset[str]

    def is_empty(self) -> bool:
        return not (self.added_peers or self.removed_peers or self.added_countries or self.removed_countries)


def snapshot_diff(before: PeeringGraph, after: PeeringGraph) -> SnapshotDiff:
    """Diff two peering snapshots; both must describe the same operator."""
    if before.sno != after.sno or before.focus_asns != after.focus_asns:
        raise ValueError(f"snapshots describe different operators: {before.sno!r} vs {after.sno!r}")
    peers_before = set(before.peers)
    peers_after = set(after.peers)
    countries_before = infer_countries(before)
    countries_after = infer_countries(after)
    return SnapshotDiff(
        sno=before.sno,
        added_peers=frozenset(peers_after - peers_before),
        removed_peers=frozenset(peers_before - peers_after),
        added_countries=frozenset(countries_after - countries_before),
        removed_countries=frozenset(countries_before - countries_after),
    )


def graph_to_dot(graph: PeeringGraph) -> str:
    """Render the neighborhood as a DOT graph with node attributes."""
    lines = [f'graph "{graph.sno}" {{']
    focus_degree = {f: sum(1 for a, _ in graph.edges if a == f) for f in graph.focus_asns}
    for focus_asn in sorted(graph.focus_asns):
        lines.append(f'  "{focus_asn}" [role="focus", degree={focus_degree[focus_asn]}];')
    for peer_asn in sorted(graph.peers):
        peer = graph.peers[peer_asn]
        lines.append(f'  "{peer_asn}" [country="{peer.country_code}", degree={peer.degree}];')
    for focus_asn, peer_asn in sorted(graph.edges):
        lines.append(f'  "{focus_asn}" -- "{peer_asn}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
