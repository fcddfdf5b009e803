"""
Structured logging and Prometheus metrics for the feature learning workbench.
"""
import logging
import sys
import time
import uuid
from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from typing import Dict, Iterator, Optional

import structlog
from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

# Context variables for run tracking
run_id_var: ContextVar[str] = ContextVar('run_id', default='')
stage_var: ContextVar[str] = ContextVar('stage', default='')


REGISTRY = CollectorRegistry(auto_describe=True)

# Prometheus metrics
SNN_PRESENTATIONS = Counter(
    'workbench_snn_presentations_total',
    'Total number of patches presented to a spiking network',
    ['phase'],
    registry=REGISTRY,
)

SNN_OUTPUT_SPIKES = Counter(
    'workbench_snn_output_spikes_total',
    'Total number of output spikes emitted by spiking networks',
    ['phase'],
    registry=REGISTRY,
)

AE_BATCHES = Counter(
    'workbench_ae_batches_total',
    'Total number of auto-encoder optimizer steps',
    registry=REGISTRY,
)

DESCRIPTORS_BUILT = Counter(
    'workbench_descriptors_built_total',
    'Total number of image descriptors built',
    ['extractor'],
    registry=REGISTRY,
)

COMMAND_RUNS = Counter(
    'workbench_command_runs_total',
    'Total number of CLI command executions',
    ['command', 'status'],
    registry=REGISTRY,
)

STAGE_DURATION = Histogram(
    'workbench_stage_duration_seconds',
    'Pipeline stage duration in seconds',
    ['stage'],
    buckets=(0.01, 0.1, 1.0, 10.0, 60.0, 300.0, 1800.0, 7200.0, float("inf")),
    registry=REGISTRY,
)


def add_run_id(logger, method_name, event_dict):
    """Add run ID to log events."""
    run_id = run_id_var.get('')
    if run_id:
        event_dict['run_id'] = run_id
    return event_dict


def add_stage(logger, method_name, event_dict):
    """Add current pipeline stage to log events."""
    stage = stage_var.get('')
    if stage:
        event_dict['stage'] = stage
    return event_dict


def setup_observability(log_level: str = "INFO", log_format: str = "json") -> None:
    """Configure structured logging."""
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, log_level.upper(), logging.INFO),
        force=True,
    )

    renderer = (
        structlog.processors.JSONRenderer()
        if log_format == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            add_run_id,
            add_stage,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def new_run_id() -> str:
    """Create and bind a fresh run ID for the current context."""
    run_id = uuid.uuid4().hex[:12]
    run_id_var.set(run_id)
    return run_id


@contextmanager
def track_stage(stage: str, timings: Optional[Dict[str, float]] = None) -> Iterator[None]:
    """Time a pipeline stage, record it in the histogram and optional timings dict."""
    logger = structlog.get_logger(__name__)
    token = stage_var.set(stage)
    start_time = time.perf_counter()
    try:
        yield
    except Exception as e:
        logger.error("Stage failed",
                     duration_ms=round((time.perf_counter() - start_time) * 1000, 2),
                     error=str(e))
        raise
    else:
        duration = time.perf_counter() - start_time
        STAGE_DURATION.labels(stage=stage).observe(duration)
        if timings is not None:
            timings[stage] = timings.get(stage, 0.0) + duration
        logger.info("Stage completed", duration_ms=round(duration * 1000, 2))
    finally:
        stage_var.reset(token)


def track_command(command: str, status: str = 'success') -> None:
    """Track CLI command outcome."""
    COMMAND_RUNS.labels(command=command, status=status).inc()


def write_metrics(path: Path) -> None:
    """Dump the workbench registry in Prometheus text format."""
    logger = structlog.get_logger(__name__)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(path), REGISTRY)
        logger.debug("Metrics written", path=str(path))
    except OSError as e:
        # Don't let metrics failures break the run
        logger.warning("Failed to write metrics", path=str(path), error=str(e))
