"""Scenario description and its on-disk TOML form.

A scenario is everything the simulator needs to rerun a session
bit-identically: the peer roster with their clock models and capture
sources, the directed link matrix, stream and buffer parameters, the
duration, and one global seed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

from ..audio import ConfigError
from ..jitter import JitterBufferConfig
from ..wire import StreamConfig
from .models import BurstModel, ClockModel, Jitter, LinkModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class PeerSpec:
    peer_id: str
    clock: ClockModel = field(default_factory=ClockModel)
    source: str = "silence"  # "silence", "sine[:freq]", or "file:<path>"


@dataclass
class Scenario:
    name: str
    duration_s: float
    seed: int
    peers: list
    links: dict                 # (src_id, dst_id) -> LinkModel
    stream: StreamConfig = field(default_factory=StreamConfig)
    buffer: JitterBufferConfig = field(default_factory=JitterBufferConfig)
    probe_interval_s: float = 1.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.probe_interval_s <= 0:
            raise ConfigError("probe_interval_s must be positive")
        ids = [p.peer_id for p in self.peers]
        if len(ids) < 2:
            raise ConfigError("a scenario needs at least two peers")
        if len(set(ids)) != len(ids):
            raise ConfigError("peer ids must be unique")
        for a in ids:
            for b in ids:
                if a != b and (a, b) not in self.links:
                    raise ConfigError("no link model for %s -> %s" % (a, b))
        for pair in self.links:
            if pair[0] not in ids or pair[1] not in ids:
                raise ConfigError("link %s -> %s names an unknown peer" % pair)

    def peer(self, peer_id: str) -> PeerSpec:
        for p in self.peers:
            if p.peer_id == peer_id:
                return p
        raise KeyError(peer_id)

    def link(self, src_id: str, dst_id: str) -> LinkModel:
        return self.links[(src_id, dst_id)]


def _jitter_from_table(table) -> Jitter:
    return Jitter(
        kind=table.get("kind", "none"),
        low_ms=table.get("low_ms", 0.0),
        high_ms=table.get("high_ms", 0.0),
        mean_excess_ms=table.get("mean_excess_ms", 0.0),
    )


def _burst_from_table(table) -> BurstModel:
    return BurstModel(
        rate_hz=table["rate_hz"],
        duration_ms=table["duration_ms"],
        height_min_ms=table["height_min_ms"],
        height_max_ms=table["height_max_ms"],
    )


def scenario_from_dict(doc: dict, name="scenario") -> Scenario:
    try:
        peers = [
            PeerSpec(
                peer_id=p["id"],
                clock=ClockModel(
                    drift_ppm=p.get("drift_ppm", 0.0),
                    offset_us=p.get("offset_us", 0),
                ),
                source=p.get("source", "silence"),
            )
            for p in doc["peer"]
        ]
        links = {}
        for entry in doc["link"]:
            link = LinkModel(
                base_owd_ms=entry["base_owd_ms"],
                jitter=_jitter_from_table(entry.get("jitter", {})),
                loss_prob=entry.get("loss_prob", 0.0),
                reorder=entry.get("reorder", False),
                burst=_burst_from_table(entry["burst"]) if "burst" in entry else None,
            )
            links[(entry["from"], entry["to"])] = link
        stream_tbl = doc.get("stream", {})
        buffer_tbl = doc.get("buffer", {})
        return Scenario(
            name=doc.get("name", name),
            duration_s=doc["duration_s"],
            seed=doc["seed"],
            peers=peers,
            links=links,
            stream=StreamConfig(
                sample_rate=stream_tbl.get("sample_rate", 44100),
                channels=stream_tbl.get("channels", 1),
                frames_per_packet=stream_tbl.get("frames_per_packet", 128),
            ),
            buffer=JitterBufferConfig(
                window_seconds=buffer_tbl.get("window_seconds", 4.0),
                percentile=buffer_tbl.get("percentile", 99.0),
                safety_margin_frames=buffer_tbl.get("safety_margin_frames", 128),
                min_target_frames=buffer_tbl.get("min_target_frames", 128),
                max_target_frames=buffer_tbl.get("max_target_frames", 1536),
                late_timeout_ms=buffer_tbl.get("late_timeout_ms", 1000),
            ),
            probe_interval_s=doc.get("probe_interval_s", 1.0),
        )
    except KeyError as exc:
        raise ConfigError("scenario is missing required key %s" % exc) from exc


def load_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return scenario_from_dict(doc, name=str(path))
