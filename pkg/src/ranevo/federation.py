"""Messaging between control agents and the central optimizer.

Everything on the wire is a length-prefixed JSON frame: 4 bytes of big-endian
payload length followed by one UTF-8 JSON object with exactly the keys
``kind``, ``agent_id``, ``correlation_id`` and ``payload``. Non-finite floats
are rejected in both directions and genome values survive a round trip at
full float64 precision or the frame is refused. Routing is in-process
(thread-safe queues standing in for sockets) with undeliverable frames kept
on a dead-letter list instead of being dropped silently.
"""

from __future__ import annotations

import json
import queue
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .ga import GaParams, GaTier
from .nets import Genome, NetTopology

KIND_REQUEST = "opt_request"
KIND_RESPONSE = "opt_response"
KINDS = frozenset({KIND_REQUEST, KIND_RESPONSE})

MAX_FRAME_BYTES = 64 * 1024 * 1024
OPTIMIZER = "optimizer"


@dataclass(frozen=True)
class Envelope:
    kind: str
    agent_id: int
    correlation_id: int
    payload: dict

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if self.agent_id < 0 or not 0 <= self.correlation_id < 2**64:
            raise ValueError("agent_id must be >= 0 and correlation_id unsigned 64-bit")


def encode_frame(env: Envelope) -> bytes:
    body = json.dumps(
        {
            "kind": env.kind,
            "agent_id": env.agent_id,
            "correlation_id": env.correlation_id,
            "payload": env.payload,
        },
        allow_nan=False,
        separators=(",", ":"),
    ).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise ValueError("frame too large")
    return struct.pack(">I", len(body)) + body


def _reject_constant(name):
    raise ValueError(f"non-finite value {name} in frame")


def _parse_body(body: bytes) -> Envelope:
    try:
        obj = json.loads(body.decode("utf-8"), parse_constant=_reject_constant)
    except UnicodeDecodeError as e:
        raise ValueError(f"frame is not UTF-8: {e}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"frame is not valid JSON: {e}") from e
    if not isinstance(obj, dict) or set(obj) != {
        "kind",
        "agent_id",
        "correlation_id",
        "payload",
    }:
        raise ValueError("frame object must have exactly kind/agent_id/correlation_id/payload")
    if not isinstance(obj["agent_id"], int) or not isinstance(obj["correlation_id"], int):
        raise ValueError("agent_id and correlation_id must be integers")
    if not isinstance(obj["payload"], dict):
        raise ValueError("payload must be an object")
    return Envelope(obj["kind"], obj["agent_id"], obj["correlation_id"], obj["payload"])


def decode_frame(data: bytes) -> Envelope:
    """Decode exactly one complete frame; truncation or trailing bytes fail."""
    if len(data) < 4:
        raise ValueError("truncated frame: missing length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_FRAME_BYTES:
        raise ValueError("declared frame length too large")
    if len(data) < 4 + length:
        raise ValueError(f"truncated frame: want {length} body bytes, have {len(data) - 4}")
    if len(data) > 4 + length:
        raise ValueError("trailing bytes after frame")
    return _parse_body(data[4:])


class FrameDecoder:
    """Incremental decoder for a byte stream of concatenated frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Envelope]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                break
            (length,) = struct.unpack(">I", self._buf[:4])
            if length > MAX_FRAME_BYTES:
                raise ValueError("declared frame length too large")
            if len(self._buf) < 4 + length:
                break
            body = bytes(self._buf[4 : 4 + length])
            del self._buf[: 4 + length]
            out.append(_parse_body(body))
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


class CorrelationIds:
    """Monotone per-agent correlation ids: (agent_id << 32) | local counter."""

    def __init__(self, agent_id: int):
        if agent_id < 0:
            raise ValueError("agent_id must be >= 0")
        self.agent_id = agent_id
        self._counter = 0

    def next(self) -> int:
        self._counter += 1
        return (self.agent_id << 32) | self._counter


def correlation_agent(correlation_id: int) -> int:
    return correlation_id >> 32


def _genome_payload(genome: Genome) -> dict:
    return {
        "genome": [float(v) for v in genome.values],
        "topology": genome.topology.to_dict(),
    }


def _genome_from_payload(p: dict) -> Genome:
    topo = NetTopology.from_dict(p["topology"])
    return Genome(np.asarray(p["genome"], dtype=np.float64), topo)


@dataclass(frozen=True)
class OptimizationRequest:
    """An agent's plea for help: its current genome plus the evidence."""

    agent_id: int
    correlation_id: int
    genome: Genome
    indication: GaTier
    window_returns: tuple[float, ...]
    target_return: float
    incumbent_fitness: float | None = None

    def to_envelope(self) -> Envelope:
        payload = _genome_payload(self.genome)
        payload.update(
            {
                "indication": self.indication.value,
                "window_returns": [float(r) for r in self.window_returns],
                "target_return": float(self.target_return),
                "incumbent_fitness": (
                    None if self.incumbent_fitness is None else float(self.incumbent_fitness)
                ),
            }
        )
        return Envelope(KIND_REQUEST, self.agent_id, self.correlation_id, payload)

    @staticmethod
    def from_envelope(env: Envelope) -> "OptimizationRequest":
        if env.kind != KIND_REQUEST:
            raise ValueError(f"expected {KIND_REQUEST}, got {env.kind}")
        p = env.payload
        inc = p["incumbent_fitness"]
        return OptimizationRequest(
            env.agent_id,
            env.correlation_id,
            _genome_from_payload(p),
            GaTier(p["indication"]),
            tuple(float(r) for r in p["window_returns"]),
            float(p["target_return"]),
            None if inc is None else float(inc),
        )


@dataclass(frozen=True)
class OptimizationResponse:
    """The optimizer's answer: best genome found, its measured fitness, the
    post-scaling GA parameters that were actually run, and how long it took."""

    agent_id: int
    correlation_id: int
    genome: Genome
    fitness: float
    applied_params: GaParams
    wall_time_ms: float

    def to_envelope(self) -> Envelope:
        p = self.applied_params
        payload = _genome_payload(self.genome)
        payload.update(
            {
                "fitness": float(self.fitness),
                "applied_params": {
                    "generations": p.generations,
                    "population": p.population,
                    "elitism": p.elitism,
                    "mutation_rate": p.mutation_rate,
                    "crossover_rate": p.crossover_rate,
                    "mutation_sigma": p.mutation_sigma,
                    "tournament_size": p.tournament_size,
                    "target_fitness": p.target_fitness,
                },
                "wall_time_ms": float(self.wall_time_ms),
            }
        )
        return Envelope(KIND_RESPONSE, self.agent_id, self.correlation_id, payload)

    @staticmethod
    def from_envelope(env: Envelope) -> "OptimizationResponse":
        if env.kind != KIND_RESPONSE:
            raise ValueError(f"expected {KIND_RESPONSE}, got {env.kind}")
        p = env.payload
        return OptimizationResponse(
            env.agent_id,
            env.correlation_id,
            _genome_from_payload(p),
            float(p["fitness"]),
            GaParams(**p["applied_params"]),
            float(p["wall_time_ms"]),
        )


class Router:
    """In-process post office keyed by endpoint name.

    Requests go to the ``optimizer`` endpoint, responses to ``agent:<id>``.
    Every frame crosses the wire codec, so anything a real transport would
    refuse is refused here too. Frames for unregistered endpoints land on
    ``dead_letters``. Ordering is per-sender FIFO.
    """

    def __init__(self):
        self._boxes: dict[str, queue.Queue] = {}
        self._lock = threading.Lock()
        self.dead_letters: list[tuple[str, Envelope]] = []

    def register(self, name: str) -> queue.Queue:
        with self._lock:
            if name not in self._boxes:
                self._boxes[name] = queue.Queue()
            return self._boxes[name]

    @staticmethod
    def destination_of(env: Envelope) -> str:
        return OPTIMIZER if env.kind == KIND_REQUEST else f"agent:{env.agent_id}"

    def send(self, env: Envelope) -> bool:
        frame = encode_frame(env)
        delivered = decode_frame(frame)
        dest = self.destination_of(delivered)
        with self._lock:
            box = self._boxes.get(dest)
            if box is None:
                self.dead_letters.append((dest, delivered))
                return False
        box.put(delivered)
        return True


@dataclass(frozen=True)
class ResourceSnapshot:
    """Free CPU and memory as fractions of the node's capacity."""

    cpu_available_fraction: float
    mem_available_fraction: float

    def __post_init__(self):
        for v in (self.cpu_available_fraction, self.mem_available_fraction):
            if not 0.0 <= v <= 1.0:
                raise ValueError("resource fractions must be in [0, 1]")


def scaling_factor(snapshot: ResourceSnapshot) -> float:
    """Single effort multiplier: the scarcer of free CPU and free memory."""
    return min(snapshot.cpu_available_fraction, snapshot.mem_available_fraction)


class StaticResourceProvider:
    def __init__(self, cpu_available_fraction: float = 1.0, mem_available_fraction: float = 1.0):
        self._snap = ResourceSnapshot(cpu_available_fraction, mem_available_fraction)

    def sample(self) -> ResourceSnapshot:
        return self._snap


class ScriptedResourceProvider:
    """Replays a fixed sequence of snapshots, holding the last one forever.

    Accepts ResourceSnapshot instances or (cpu, mem) pairs.
    """

    def __init__(self, snapshots):
        if not snapshots:
            raise ValueError("need at least one snapshot")
        self._snaps = [
            s if isinstance(s, ResourceSnapshot) else ResourceSnapshot(*s) for s in snapshots
        ]
        self._i = 0

    def sample(self) -> ResourceSnapshot:
        snap = self._snaps[min(self._i, len(self._snaps) - 1)]
        self._i += 1
        return snap


def deploy_gate(candidate_fitness: float, incumbent_fitness: float) -> bool:
    """Adopt only if the evolved candidate is at least as good as what it
    would replace; equality counts as deployable."""
    return candidate_fitness >= incumbent_fitness
