"""patchkit: an issue-patching pipeline with offline-verifiable model calls.

Workflow: snapshot the repository, localize the issue to files then lines,
sample SEARCH/REPLACE patch candidates with an optional self-critique turn,
gate dual-style PoCs on the unpatched tree, score every candidate by dynamic
testing, and pick the winner by normalized majority vote. A distillation
data factory reuses the same prompts to build filtered SFT records.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, build_gateway, load_config
from .errors import PatchKitError
from .gateway import Gateway, HttpBackend, ScriptedBackend
from .pipeline import Issue, load_issue, run_pipeline
from .repo_index import RepoSnapshot, scan_repo

__all__ = [
    "Gateway",
    "HttpBackend",
    "Issue",
    "PatchKitError",
    "PipelineConfig",
    "RepoSnapshot",
    "ScriptedBackend",
    "build_gateway",
    "load_config",
    "load_issue",
    "run_pipeline",
    "scan_repo",
    "__version__",
]
