"""
Coordinator/agent wire protocol.

Every message travels as one frame: a 4-byte big-endian length followed by
that many bytes of UTF-8 JSON ``{"body": {...}, "type": "<Name>"}`` with
sorted keys and compact separators, so equal messages encode to equal bytes.
"""
from __future__ import annotations
import asyncio
import json
import os
import struct
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Optional, Tuple, Type, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConnectionClosed, ExchangeTimeout, FrameError, OrderViolation, SchemaError, WireError
from .models import AgentModel, PolicyConfig, SolverConfig
from .observability import StructuredLogger
from .utils import canonical_json_string, reject_constant

logger = StructuredLogger(__name__)

HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 16 * 1024 * 1024
DEFAULT_TIMEOUT_S = 30.0
# how long a TCP coordinator waits for every agent to connect
DEFAULT_ACCEPT_TIMEOUT_S = 60.0


# ============================================================================
# Messages
# ============================================================================

class WireMessage(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    TYPE: ClassVar[str] = ""


class Hello(WireMessage):
    TYPE: ClassVar[str] = "Hello"
    agent_id: int = Field(..., ge=1)


class AgentConfig(WireMessage):
    TYPE: ClassVar[str] = "AgentConfig"
    agent_id: int = Field(..., ge=1)
    model: AgentModel
    M: int = Field(..., ge=1)
    Q_diag: List[float]
    R_diag: List[float]
    kappa: float = Field(..., gt=0, lt=1)
    policy: PolicyConfig
    solver: SolverConfig
    state_box: Optional[Tuple[List[float], List[float]]] = None


class NeighborStates(WireMessage):
    TYPE: ClassVar[str] = "NeighborStates"
    j: int = Field(..., ge=0)
    samples: Dict[int, List[float]]
    own_state: List[float]


class PlanResult(WireMessage):
    TYPE: ClassVar[str] = "PlanResult"
    j: int = Field(..., ge=0)
    agent_id: int = Field(..., ge=1)
    u_seq: List[List[float]]
    terminal: List[float]
    J_star: float
    J: float
    phi: float
    lex_active: bool
    stage: str
    t_primary_ms: float
    t_lex_ms: float
    n_var: int
    n_eq: int
    n_ineq: int
    hull_dim: int
    status: str
    detail: str = ""


class Shutdown(WireMessage):
    TYPE: ClassVar[str] = "Shutdown"


class Ack(WireMessage):
    TYPE: ClassVar[str] = "Ack"


class ProtocolError(WireMessage):
    TYPE: ClassVar[str] = "ProtocolError"
    code: str
    detail: str


Message = Union[Hello, AgentConfig, NeighborStates, PlanResult, Shutdown, Ack, ProtocolError]

MESSAGE_TYPES: Dict[str, Type[WireMessage]] = {
    cls.TYPE: cls for cls in (Hello, AgentConfig, NeighborStates, PlanResult, Shutdown, Ack, ProtocolError)
}


# ============================================================================
# Framing
# ============================================================================

def payload_of(msg: WireMessage) -> bytes:
    try:
        text = canonical_json_string({"type": msg.TYPE, "body": msg.model_dump(mode="json")})
    except ValueError as e:
        raise SchemaError(f"cannot encode {msg.TYPE}: {e}") from e
    return text.encode("utf-8")


def encode(msg: WireMessage) -> bytes:
    payload = payload_of(msg)
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameError(f"payload of {len(payload)} bytes exceeds the frame cap")
    return HEADER.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> WireMessage:
    try:
        obj = json.loads(payload.decode("utf-8"), parse_constant=reject_constant)
    except (UnicodeDecodeError, ValueError) as e:
        raise FrameError(f"malformed JSON payload: {e}") from e
    if not isinstance(obj, dict) or set(obj) != {"type", "body"}:
        raise SchemaError("payload must be an object with exactly 'type' and 'body'")
    kind, body = obj["type"], obj["body"]
    if not isinstance(kind, str) or not isinstance(body, dict):
        raise SchemaError("'type' must be a string and 'body' an object")
    cls = MESSAGE_TYPES.get(kind)
    if cls is None:
        raise SchemaError(f"unknown message type {kind!r}")
    try:
        return cls.model_validate(body)
    except ValidationError as e:
        raise SchemaError(f"invalid {kind} body: {e.errors()[0]['msg']}") from e


def _frame_length(header: bytes) -> int:
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"frame length {length} exceeds the {MAX_FRAME_BYTES}-byte cap")
    return length


def decode(data: bytes) -> WireMessage:
    """Decode exactly one complete frame."""
    if len(data) < HEADER.size:
        raise FrameError("truncated frame header")
    length = _frame_length(data[: HEADER.size])
    if len(data) < HEADER.size + length:
        raise FrameError(f"truncated frame: expected {length} payload bytes, got {len(data) - HEADER.size}")
    if len(data) > HEADER.size + length:
        raise FrameError("trailing bytes after frame")
    return decode_payload(data[HEADER.size:])


def decode_stream(data: bytes) -> List[WireMessage]:
    """Split concatenated frames and decode each."""
    out: List[WireMessage] = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < HEADER.size:
            raise FrameError("truncated frame header")
        length = _frame_length(data[pos:pos + HEADER.size])
        end = pos + HEADER.size + length
        if end > len(data):
            raise FrameError("truncated frame")
        out.append(decode_payload(data[pos + HEADER.size:end]))
        pos = end
    return out


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    try:
        header = await reader.readexactly(HEADER.size)
        length = _frame_length(header)
        return header + await reader.readexactly(length)
    except asyncio.IncompleteReadError as e:
        raise ConnectionClosed("peer closed the connection mid-frame" if e.partial else "peer closed the connection") from e
    except (ConnectionResetError, BrokenPipeError) as e:
        raise ConnectionClosed(f"connection reset: {e}") from e


# ============================================================================
# Connections
# ============================================================================

@dataclass(frozen=True)
class WireSettings:
    timeout_s: float = DEFAULT_TIMEOUT_S
    accept_timeout_s: float = DEFAULT_ACCEPT_TIMEOUT_S

    @classmethod
    def from_env(cls) -> "WireSettings":
        values = {}
        if raw := os.getenv("HULLSENSE_TIMEOUT_S"):
            values["timeout_s"] = float(raw)
        if raw := os.getenv("HULLSENSE_ACCEPT_TIMEOUT_S"):
            values["accept_timeout_s"] = float(raw)
        return cls(**values)


class Connection:
    """Message-level duplex channel; one outstanding request at a time."""

    def __init__(self, name: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.name = name
        self.timeout_s = timeout_s
        self._pending = False
        self.closed = False

    async def _write(self, frame: bytes) -> None:
        raise NotImplementedError

    async def _read(self) -> bytes:
        raise NotImplementedError

    async def close(self) -> None:
        self.closed = True

    async def send(self, msg: WireMessage) -> None:
        if self.closed:
            raise ConnectionClosed(f"connection {self.name} is closed")
        await self._write(encode(msg))

    async def recv(self, timeout_s: Optional[float] = None) -> WireMessage:
        timeout = self.timeout_s if timeout_s is None else timeout_s
        try:
            frame = await asyncio.wait_for(self._read(), timeout)
        except asyncio.TimeoutError as e:
            raise ExchangeTimeout(f"no message within {timeout}s", peer=self.name) from e
        return decode(frame)

    async def wait(self) -> WireMessage:
        """Receive with no deadline (agents idling between outer steps)."""
        return decode(await self._read())

    @property
    def busy(self) -> bool:
        return self._pending


class StreamConnection(Connection):
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, name: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        super().__init__(name, timeout_s)
        self.reader = reader
        self.writer = writer

    async def _write(self, frame: bytes) -> None:
        try:
            self.writer.write(frame)
            await self.writer.drain()
        except (ConnectionResetError, BrokenPipeError) as e:
            raise ConnectionClosed(f"connection reset: {e}", peer=self.name) from e

    async def _read(self) -> bytes:
        return await read_frame(self.reader)

    async def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionResetError, BrokenPipeError):
            pass


class MemoryConnection(Connection):
    """In-process endpoint over a pair of queues carrying encoded frames."""

    def __init__(self, inbox: "asyncio.Queue[Optional[bytes]]", outbox: "asyncio.Queue[Optional[bytes]]", name: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        super().__init__(name, timeout_s)
        self.inbox = inbox
        self.outbox = outbox

    async def _write(self, frame: bytes) -> None:
        await self.outbox.put(frame)

    async def _read(self) -> bytes:
        frame = await self.inbox.get()
        if frame is None:
            raise ConnectionClosed("peer closed the connection", peer=self.name)
        return frame

    async def close(self) -> None:
        if not self.closed:
            self.closed = True
            await self.outbox.put(None)


def memory_pipe(name: str, timeout_s: float = DEFAULT_TIMEOUT_S) -> Tuple[MemoryConnection, MemoryConnection]:
    """Two connected endpoints: (coordinator side, agent side)."""
    a_to_b: "asyncio.Queue[Optional[bytes]]" = asyncio.Queue()
    b_to_a: "asyncio.Queue[Optional[bytes]]" = asyncio.Queue()
    return (
        MemoryConnection(inbox=b_to_a, outbox=a_to_b, name=name, timeout_s=timeout_s),
        MemoryConnection(inbox=a_to_b, outbox=b_to_a, name=name, timeout_s=timeout_s),
    )


async def open_connection(host: str, port: int, name: str, timeout_s: float = DEFAULT_TIMEOUT_S) -> StreamConnection:
    try:
        reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), timeout_s)
    except asyncio.TimeoutError as e:
        raise ExchangeTimeout(f"connect to {host}:{port} timed out") from e
    except OSError as e:
        raise ConnectionClosed(f"cannot connect to {host}:{port}: {e}") from e
    return StreamConnection(reader, writer, name=name, timeout_s=timeout_s)


async def exchange(conn: Connection, request: WireMessage, timeout_s: Optional[float] = None) -> WireMessage:
    """Send one request and wait for its reply."""
    if conn.busy:
        raise OrderViolation(f"request {request.TYPE} issued while another is outstanding", peer=conn.name)
    conn._pending = True
    try:
        await conn.send(request)
        reply = await conn.recv(timeout_s)
    finally:
        conn._pending = False
    logger.debug("Exchange completed", peer=conn.name, request=request.TYPE, reply=reply.TYPE)
    return reply


async def send_error(conn: Connection, err: WireError) -> None:
    """Best-effort ProtocolError notice before closing."""
    try:
        await conn.send(ProtocolError(code=err.code, detail=err.detail))
    except WireError:
        pass
