"""Subprocess sandbox for PoC scripts and functionality test commands.

Every run gets its own process group so a timeout can kill the whole tree,
streams are captured and truncated with an in-band marker, and absolute
working-directory paths are scrubbed from output so transcripts are stable
across runs (they feed prompts and must not leak temp-dir entropy).
"""

from __future__ import annotations

import logging
import os
import shutil
import signal
import subprocess
import sys
import textwrap
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import EnvError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_OUTPUT_LIMIT_BYTES = 64 * 1024
TIMEOUT_EXIT_CODE = -signal.SIGKILL

POC_FILENAME = "_poc.py"
WORKDIR_PLACEHOLDER = "<workdir>"

_NETWORK_GUARD = textwrap.dedent(
    """\
    import socket as _socket

    def _blocked(*args, **kwargs):
        raise OSError("network access disabled by sandbox")

    _socket.socket = _blocked
    _socket.create_connection = _blocked
    """
)


@dataclass(frozen=True)
class ExecTranscript:
    exit_code: int
    stdout: str
    stderr: str
    duration_ms: int
    timed_out: bool

    def render(self) -> str:
        """Deterministic textual form used inside prompts (no timing)."""
        parts = [f"exit code: {self.exit_code}"]
        if self.timed_out:
            parts.append("(timed out)")
        parts.append("--- stdout ---")
        parts.append(self.stdout if self.stdout else "(empty)")
        parts.append("--- stderr ---")
        parts.append(self.stderr if self.stderr else "(empty)")
        return "\n".join(parts)

    @property
    def observable_output(self) -> str:
        return (self.stdout + self.stderr).strip()


def _truncate(data: bytes, limit: int) -> str:
    if len(data) <= limit:
        return data.decode("utf-8", errors="replace")
    kept = data[:limit].decode("utf-8", errors="replace")
    return kept + f"\n[output truncated at {limit} bytes; {len(data) - limit} bytes dropped]"


def _scrub(text: str, workdir: Path) -> str:
    return text.replace(str(workdir), WORKDIR_PLACEHOLDER)


def _network_guard_dir(base: Path) -> Path:
    guard = base / "_sandbox_guard"
    guard.mkdir(exist_ok=True)
    (guard / "sitecustomize.py").write_text(_NETWORK_GUARD, encoding="utf-8")
    return guard


def run_command(
    workdir,
    argv: list[str],
    timeout_s: float = DEFAULT_TIMEOUT_S,
    output_limit_bytes: int = DEFAULT_OUTPUT_LIMIT_BYTES,
    deny_network: bool = True,
    extra_env: dict[str, str] | None = None,
) -> ExecTranscript:
    """Run a command under the sandbox contract (timeout, truncation, scrub)."""
    workdir = Path(workdir)
    if not workdir.is_dir():
        raise EnvError(f"sandbox workdir missing: {workdir}")

    env = dict(os.environ)
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    if deny_network:
        guard = _network_guard_dir(workdir)
        existing = env.get("PYTHONPATH")
        env["PYTHONPATH"] = f"{guard}{os.pathsep}{existing}" if existing else str(guard)
    if extra_env:
        env.update(extra_env)

    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=str(workdir),
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=env,
            start_new_session=True,
        )
    except FileNotFoundError as exc:
        raise EnvError(f"interpreter or command not found: {argv[0]}") from exc

    timed_out = False
    try:
        out, err = proc.communicate(timeout=timeout_s)
        exit_code = proc.returncode
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        out, err = proc.communicate()
        exit_code = TIMEOUT_EXIT_CODE
    duration_ms = int((time.monotonic() - start) * 1000)

    return ExecTranscript(
        exit_code=exit_code,
        stdout=_scrub(_truncate(out or b"", output_limit_bytes), workdir),
        stderr=_scrub(_truncate(err or b"", output_limit_bytes), workdir),
        duration_ms=duration_ms,
        timed_out=timed_out,
    )


def run_sandbox(
    workdir,
    script: str,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    output_limit_bytes: int = DEFAULT_OUTPUT_LIMIT_BYTES,
    interpreter: str | None = None,
    deny_network: bool = True,
) -> ExecTranscript:
    """Execute a self-contained script inside a candidate tree.

    The script is written to a fixed name in the workdir (so tracebacks are
    stable after path scrubbing) and run with the tree as both cwd and
    import root.
    """
    workdir = Path(workdir)
    if not workdir.is_dir():
        raise EnvError(f"sandbox workdir missing: {workdir}")
    python = interpreter or sys.executable
    if shutil.which(python) is None and not Path(python).exists():
        raise EnvError(f"interpreter not found: {python}")
    script_path = workdir / POC_FILENAME
    script_path.write_text(script, encoding="utf-8")
    return run_command(
        workdir,
        [python, POC_FILENAME],
        timeout_s=timeout_s,
        output_limit_bytes=output_limit_bytes,
        deny_network=deny_network,
    )
