"""Exception hierarchy shared across the pipeline stages."""


class PatchKitError(Exception):
    """Base class for all pipeline errors."""


class RepoError(PatchKitError):
    """Repository snapshot cannot be built (unreadable root, bad path)."""


class ChunkError(PatchKitError):
    """A file cannot be split within the token budget."""

    def __init__(self, message: str, file_path: str = "", line_number: int = 0):
        super().__init__(message)
        self.file_path = file_path
        self.line_number = line_number


class TemplateError(PatchKitError):
    """A prompt template placeholder has no binding."""

    def __init__(self, placeholder: str):
        super().__init__(f"missing binding for placeholder: {placeholder!r}")
        self.placeholder = placeholder


class GatewayError(PatchKitError):
    """Base class for model backend failures."""


class RetryExhausted(GatewayError):
    """Transport kept failing after the configured number of attempts."""


class BadRequest(GatewayError):
    """The backend rejected the request (HTTP 4xx); never retried."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"backend returned {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class ScriptMiss(GatewayError):
    """The scripted backend has no record for a prompt digest."""

    def __init__(self, digest: str, model_tag: str = ""):
        super().__init__(f"no scripted record for digest {digest} (model_tag={model_tag})")
        self.digest = digest
        self.model_tag = model_tag


class PatchFormatError(PatchKitError):
    """Base class for patch text problems."""


class EmptyPatch(PatchFormatError):
    """An answer contained zero well-formed edit blocks."""

    def __init__(self, problems=None):
        super().__init__("no well-formed edit blocks found")
        self.problems = list(problems or [])


class ApplyError(PatchKitError):
    """An edit's search text was not found (or its file is absent)."""

    def __init__(self, file_path: str, edit_index: int, reason: str):
        super().__init__(f"edit {edit_index} on {file_path}: {reason}")
        self.file_path = file_path
        self.edit_index = edit_index


class AmbiguousMatch(ApplyError):
    """An edit's search text occurs more than once in the target file."""

    def __init__(self, file_path: str, edit_index: int, count: int):
        super().__init__(file_path, edit_index, f"search text found {count} times")
        self.count = count


class GenerationError(PatchKitError):
    """Candidate generation could not produce any usable candidate."""


class AllCandidatesEmpty(GenerationError):
    """Every sampled answer failed to parse into edits."""


class PoCExhausted(PatchKitError):
    """No valid PoC of the given style survived the retry budget."""

    def __init__(self, style: str):
        super().__init__(f"no valid {style}-style PoC after retries")
        self.style = style


class EnvError(PatchKitError):
    """Sandbox interpreter or working directory is unusable."""


class NoPatchSelected(PatchKitError):
    """Selection found no applicable candidate with a non-empty diff."""


class GoldError(PatchKitError):
    """Gold answers reference files or data missing from the snapshot."""


class SchemaError(PatchKitError):
    """A serialized stage artifact is missing a required field."""

    def __init__(self, field_path: str, detail: str = ""):
        msg = f"bad stage input at {field_path}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.field_path = field_path


class StageError(PatchKitError):
    """A pipeline stage failed fatally; names the stage for the exit path."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
