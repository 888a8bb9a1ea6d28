from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

from opentelemetry import trace
from opentelemetry.sdk.resources import SERVICE_NAME, Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter, SimpleSpanProcessor


SERVICE = "cslam"

_INITIALIZED = False


def init_tracer(service_name: str = SERVICE) -> None:
    """Install the process-wide tracer provider once.

    Spans go out over OTLP/HTTP only when OTEL_EXPORTER_OTLP_ENDPOINT is set
    and are printed when CSLAM_TRACE_CONSOLE is truthy. With neither, spans
    are still recorded so their ids can go into run summaries.
    """
    global _INITIALIZED
    if _INITIALIZED:
        return

    provider = TracerProvider(
        resource=Resource(attributes={SERVICE_NAME: os.environ.get("OTEL_SERVICE_NAME", service_name)})
    )
    endpoint = os.environ.get("OTEL_EXPORTER_OTLP_ENDPOINT")
    if endpoint:
        from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter

        provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint)))
    if os.environ.get("CSLAM_TRACE_CONSOLE", "").lower() in ("1", "true", "yes", "on"):
        provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter()))

    trace.set_tracer_provider(provider)
    _INITIALIZED = True


def get_tracer(service_name: str = SERVICE):
    init_tracer(service_name)
    return trace.get_tracer(os.environ.get("OTEL_SERVICE_NAME", service_name))


@contextmanager
def stage_span(name: str, **attributes: Any) -> Iterator[Any]:
    """Span around one pipeline stage; None-valued attributes are left out."""
    with get_tracer().start_as_current_span(name) as span:
        for key, value in attributes.items():
            if value is not None:
                span.set_attribute(key, value)
        yield span


def span_to_metadata(span: Any) -> Dict[str, Optional[str]]:
    """Hex trace/span ids of ``span`` for run summaries; empty if not recording."""
    try:
        ctx = span.get_span_context()
    except Exception:
        return {}
    if not ctx.is_valid:
        return {}
    return {"trace_id": f"{ctx.trace_id:032x}", "span_id": f"{ctx.span_id:016x}"}
