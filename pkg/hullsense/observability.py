"""
Observability module: structured logging, solver metrics, and operation tracing
"""
from __future__ import annotations
import json
import logging
import os
import time
from contextlib import contextmanager
from typing import Any, Iterator, Optional

# Optional Prometheus support
try:
    from prometheus_client import CollectorRegistry, Counter, Histogram, generate_latest
    PROMETHEUS_AVAILABLE = True
except ImportError:
    PROMETHEUS_AVAILABLE = False

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once; level from HULLSENSE_LOG unless given"""
    name = (level or os.getenv("HULLSENSE_LOG", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT)


# ============================================================================
# Structured Logging
# ============================================================================

class StructuredLogger:
    """Key=value or JSON-lines logger; HULLSENSE_LOG_FORMAT=json switches to JSON"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)
        self.use_json = os.getenv("HULLSENSE_LOG_FORMAT", "text").lower() == "json"

    def _format_message(self, level: str, message: str, **kwargs: Any) -> str:
        if self.use_json:
            log_entry = {
                "timestamp": time.time(),
                "level": level,
                "message": message,
                "logger": self.logger.name,
                **kwargs,
            }
            return json.dumps(log_entry, default=str)
        extra = " ".join(f"{k}={v}" for k, v in kwargs.items()) if kwargs else ""
        return f"{message} {extra}".strip()

    def info(self, message: str, **kwargs: Any) -> None:
        self.logger.info(self._format_message("INFO", message, **kwargs))

    def warning(self, message: str, **kwargs: Any) -> None:
        self.logger.warning(self._format_message("WARNING", message, **kwargs))

    def error(self, message: str, **kwargs: Any) -> None:
        self.logger.error(self._format_message("ERROR", message, **kwargs))

    def debug(self, message: str, **kwargs: Any) -> None:
        if self.logger.isEnabledFor(logging.DEBUG):
            self.logger.debug(self._format_message("DEBUG", message, **kwargs))


# ============================================================================
# Prometheus Metrics
# ============================================================================

if PROMETHEUS_AVAILABLE:
    registry = CollectorRegistry()

    solves_total = Counter(
        "hullsense_solves_total",
        "Conic solves per OCP stage",
        ["stage", "status"],
        registry=registry,
    )

    solve_duration_seconds = Histogram(
        "hullsense_solve_duration_seconds",
        "Wall-clock duration of one OCP stage solve",
        ["stage"],
        registry=registry,
    )

    admm_iterations = Histogram(
        "hullsense_admm_iterations",
        "ADMM iterations per solve",
        ["stage"],
        buckets=(10, 50, 100, 250, 500, 1000, 2500, 5000, 10000, 20000),
        registry=registry,
    )

    outer_steps_total = Counter(
        "hullsense_outer_steps_total",
        "Completed outer steps",
        registry=registry,
    )

    monitor_violations_total = Counter(
        "hullsense_monitor_violations_total",
        "Runtime monitor violations",
        ["monitor"],
        registry=registry,
    )


class MetricsCollector:
    """Collect and export Prometheus metrics; enabled by HULLSENSE_METRICS=true"""

    def __init__(self, enabled: Optional[bool] = None):
        if enabled is None:
            enabled = os.getenv("HULLSENSE_METRICS", "false").lower() == "true"
        self.enabled = PROMETHEUS_AVAILABLE and enabled

    def record_solve(self, stage: str, status: str, duration_ms: float, iterations: int) -> None:
        if not self.enabled:
            return
        solves_total.labels(stage=stage, status=status).inc()
        solve_duration_seconds.labels(stage=stage).observe(duration_ms / 1000.0)
        admm_iterations.labels(stage=stage).observe(iterations)

    def record_outer_step(self) -> None:
        if self.enabled:
            outer_steps_total.inc()

    def record_violation(self, monitor: str) -> None:
        if self.enabled:
            monitor_violations_total.labels(monitor=monitor).inc()

    def export_metrics(self) -> bytes:
        """Export metrics in Prometheus text format"""
        if not self.enabled:
            return b""
        return generate_latest(registry)


# Global instances
metrics_collector = MetricsCollector()
logger = StructuredLogger(__name__)


# ============================================================================
# Helper Functions
# ============================================================================

@contextmanager
def trace_operation(operation: str, **attributes: Any) -> Iterator[None]:
    """Context manager for tracing operations with logging"""
    start_time = time.perf_counter()
    logger.debug(f"Operation started: {operation}", operation=operation, **attributes)
    try:
        yield
    except Exception as e:
        duration_ms = round((time.perf_counter() - start_time) * 1000, 3)
        logger.error(
            f"Operation failed: {operation}",
            operation=operation,
            duration_ms=duration_ms,
            error=str(e),
            **attributes,
        )
        raise
    duration_ms = round((time.perf_counter() - start_time) * 1000, 3)
    logger.debug(
        f"Operation completed: {operation}",
        operation=operation,
        duration_ms=duration_ms,
        **attributes,
    )


def log_solve_metrics(
    stage: str,
    status: str,
    duration_ms: float,
    iterations: int,
    agent_id: Optional[int] = None,
    step: Optional[int] = None,
    error: Optional[str] = None,
) -> None:
    """Log one OCP stage solve and record it in Prometheus"""
    metrics_collector.record_solve(stage=stage, status=status, duration_ms=duration_ms, iterations=iterations)

    log_data: dict[str, Any] = {
        "stage": stage,
        "status": status,
        "duration_ms": round(duration_ms, 3),
        "iterations": iterations,
    }
    if agent_id is not None:
        log_data["agent_id"] = agent_id
    if step is not None:
        log_data["j"] = step

    if error:
        log_data["error"] = error
        logger.error("Solve failed", **log_data)
    else:
        logger.debug("Solve completed", **log_data)
