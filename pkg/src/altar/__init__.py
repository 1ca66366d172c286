"""Self-hosted experiment record platform.

Runs, their configurations, metric series, and artifacts live in an
embedded append-only document store plus a content-addressed blob
store, served over a JSON HTTP API. `altar-server` runs the service,
`altar-send` ingests saved experiment folders, `altar-extract`
queries, exports, and verifies publication bundles.
"""

__version__ = "0.1.0"

from .model import (
    Annotation,
    ArtifactRef,
    HostInfo,
    MetricSeries,
    RunRecord,
    RunStatus,
    flatten_paths,
    validate_config,
)

__all__ = [
    "__version__",
    "Annotation",
    "ArtifactRef",
    "HostInfo",
    "MetricSeries",
    "RunRecord",
    "RunStatus",
    "flatten_paths",
    "validate_config",
]
