"""
Exception hierarchy shared by every hullsense module.

Each error carries a human-readable ``detail`` plus optional keyword context
(agent id, outer step, stage ...) that log lines and CLI messages render.
"""
from __future__ import annotations
from typing import Any, Dict, Optional


class HullsenseError(Exception):
    """Base class for all hullsense errors"""

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context: Dict[str, Any] = {k: v for k, v in context.items() if v is not None}

    def __str__(self) -> str:
        if not self.context:
            return self.detail
        extra = " ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.detail} ({extra})"


class GeometryError(HullsenseError):
    """Invalid point sets for hull, barycenter or diameter computations"""


class DynamicsError(HullsenseError):
    """Invalid agent model or input/state dimensions"""


class ControllabilityError(DynamicsError):
    """M-step controllability matrix is rank deficient"""


class HorizonError(DynamicsError):
    """Horizon too short for a constructive maneuver"""


class GraphError(HullsenseError):
    """Invalid communication graph or agent id"""


class ConeError(HullsenseError):
    """Malformed conic program or cone specification"""


class OcpError(HullsenseError):
    """OCP compilation failure"""


class OcpSolveError(OcpError):
    """Solver did not return an optimal iterate for an OCP stage"""

    def __init__(
        self,
        detail: str,
        *,
        status: str,
        stage: str,
        iterations: int = 0,
        agent_id: Optional[int] = None,
        step: Optional[int] = None,
    ):
        super().__init__(
            detail, status=status, stage=stage, iterations=iterations, agent_id=agent_id, step=step
        )
        self.status = status
        self.stage = stage
        self.iterations = iterations
        self.agent_id = agent_id
        self.step = step


class WireError(HullsenseError):
    """Base class for coordinator/agent transport failures"""

    code = "wire_error"


class FrameError(WireError):
    """Truncated, oversize or undecodable frame"""

    code = "bad_frame"


class SchemaError(WireError):
    """Frame decoded but the message does not match the message schema"""

    code = "schema_violation"


class OrderViolation(WireError):
    """A second request was issued before the previous reply arrived"""

    code = "order_violation"


class ExchangeTimeout(WireError):
    """No reply within the configured timeout"""

    code = "timeout"


class AcceptTimeout(ExchangeTimeout):
    """Not every agent connected to the coordinator within the accept window"""


class ConnectionClosed(WireError):
    """Peer closed or reset the connection"""

    code = "connection_closed"


class ConfigError(HullsenseError):
    """Invalid scenario configuration, anchored to a file line when known"""

    def __init__(
        self,
        detail: str,
        *,
        source: Optional[str] = None,
        line: Optional[int] = None,
        path: Optional[str] = None,
    ):
        super().__init__(detail)
        self.source = source
        self.line = line
        self.path = path

    def __str__(self) -> str:
        where = self.source or "<config>"
        if self.line is not None:
            where = f"{where}:{self.line}"
        loc = f" at {self.path}" if self.path else ""
        return f"{where}: {self.detail}{loc}"


class RunAborted(HullsenseError):
    """An agent reported a failed plan; the run stops at that outer step"""
