"""Subprocess execution of generated programs in throwaway work directories.

Isolation is deliberately desk-scale: a fresh temp directory per run, an
environment reduced to an allowlist, and a wall-clock timeout. OS-level
jailing can be layered on by pointing ``interpreter_cmd`` at a wrapper.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass

OUTPUT_CAP_BYTES = 64 * 1024  # stdout/stderr each truncated to this


class SandboxSpawnFailure(Exception):
    """The interpreter itself could not be started (environment problem)."""


@dataclass(frozen=True)
class SandboxConfig:
    """How generated programs get executed.

    ``interpreter_cmd`` is a command template; the ``{script}`` token is
    replaced with the path of the program file (appended when absent).
    ``workdir`` is the parent under which each run gets a fresh directory.
    """

    interpreter_cmd: tuple[str, ...] = (sys.executable, "-I", "{script}")
    timeout_ms: int = 10_000
    workdir: str | None = None
    env_allowlist: tuple[str, ...] = ("PATH", "LANG", "LC_ALL")
    script_name: str = "program.py"

    @classmethod
    def from_command(cls, command: str, **kwargs) -> "SandboxConfig":
        import shlex

        return cls(interpreter_cmd=tuple(shlex.split(command)), **kwargs)


@dataclass(frozen=True)
class ProgramRun:
    """Raw outcome of one sandboxed execution."""

    exit_code: int | None  # None when the run timed out
    timed_out: bool
    stdout: str
    stderr: str
    wall_ms: float


def _cap(data: bytes | None) -> str:
    if not data:
        return ""
    return data[:OUTPUT_CAP_BYTES].decode("utf-8", errors="replace")


def run_program(program_text: str, cfg: SandboxConfig | None = None) -> ProgramRun:
    """Run one program in a fresh directory and capture its outcome.

    Program failures (non-zero exit, timeout) are reported in the result;
    only a failure to spawn the interpreter raises.
    """
    cfg = cfg or SandboxConfig()
    workdir = tempfile.mkdtemp(prefix="ckrun_", dir=cfg.workdir)
    try:
        script = os.path.join(workdir, cfg.script_name)
        with open(script, "w", encoding="utf-8") as f:
            f.write(program_text)
        cmd = [tok.replace("{script}", script) for tok in cfg.interpreter_cmd]
        if not any("{script}" in tok for tok in cfg.interpreter_cmd):
            cmd.append(script)
        env = {k: os.environ[k] for k in cfg.env_allowlist if k in os.environ}
        env["HOME"] = workdir
        start = time.monotonic()
        try:
            proc = subprocess.run(
                cmd,
                cwd=workdir,
                env=env,
                capture_output=True,
                timeout=cfg.timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired as exc:
            wall_ms = (time.monotonic() - start) * 1000.0
            return ProgramRun(
                exit_code=None,
                timed_out=True,
                stdout=_cap(exc.stdout),
                stderr=_cap(exc.stderr),
                wall_ms=wall_ms,
            )
        except (FileNotFoundError, PermissionError, NotADirectoryError) as exc:
            raise SandboxSpawnFailure(f"cannot spawn {cmd[0]!r}: {exc}") from exc
        wall_ms = (time.monotonic() - start) * 1000.0
        return ProgramRun(
            exit_code=proc.returncode,
            timed_out=False,
            stdout=_cap(proc.stdout),
            stderr=_cap(proc.stderr),
            wall_ms=wall_ms,
        )
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def extract_answer(stdout: str) -> str | None:
    """The program's answer is its last non-empty stdout line."""
    for line in reversed(stdout.splitlines()):
        line = line.strip()
        if line:
            return line
    return None
