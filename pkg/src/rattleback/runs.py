"""Run directories and their checksum manifests."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

__all__ = ["RunManifest", "RunDir", "runs_root", "sha256_file", "verify_manifest", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.json"


def tool_version() -> str:
    from . import __version__
    return __version__


def runs_root(override: str | None = None) -> Path:
    if override:
        return Path(override)
    return Path(os.environ.get("RATTLEBACK_RUNS_DIR", "runs"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    parameters: dict
    timestamp: str
    tool_version: str
    output_files: list[str] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


class RunDir:
    """A fresh ``<root>/<timestamp>-<command>/`` directory.

    Output files are registered through :meth:`path` and hashed in
    :meth:`finalize`, which writes the manifest last.
    """

    def __init__(self, command: str, parameters: dict, root: str | None = None,
                 now: datetime | None = None):
        now = now or datetime.now(timezone.utc)
        self.timestamp = now.isoformat(timespec="seconds")
        stamp = now.strftime("%Y%m%dT%H%M%S")
        base = runs_root(root)
        base.mkdir(parents=True, exist_ok=True)
        path = base / f"{stamp}-{command}"
        n = 1
        while path.exists():
            n += 1
            path = base / f"{stamp}-{command}-{n}"
        path.mkdir()
        self.dir = path
        self.command = command
        self.parameters = parameters
        self._files: list[str] = []

    def path(self, name: str) -> Path:
        if name not in self._files:
            self._files.append(name)
        return self.dir / name

    def finalize(self) -> RunManifest:
        m = RunManifest(
            command=self.command,
            parameters=self.parameters,
            timestamp=self.timestamp,
            tool_version=tool_version(),
            output_files=list(self._files),
            checksums={f: sha256_file(self.dir / f) for f in self._files},
        )
        (self.dir / MANIFEST_NAME).write_text(m.to_json())
        return m


def verify_manifest(run_dir) -> list[str]:
    """Problems found in ``run_dir``; an empty list means every checksum matches."""
    run_dir = Path(run_dir)
    mpath = run_dir / MANIFEST_NAME
    if not mpath.is_file():
        return [f"missing {MANIFEST_NAME}"]
    m = RunManifest.load(mpath)
    problems = []
    for name in m.output_files:
        f = run_dir / name
        if not f.is_file():
            problems.append(f"missing file {name}")
        elif sha256_file(f) != m.checksums.get(name):
            problems.append(f"checksum mismatch {name}")
    return problems
