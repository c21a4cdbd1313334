"""Atomic file output and bookkeeping for multi-file runs."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def atomic_write(path, data: str | bytes) -> Path:
    """Write to a temporary sibling, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class ArtifactSet:
    """Tracks files written during a run so a failed run can be rolled back."""

    def __init__(self, root):
        self.root = Path(root)
        self.written: list[Path] = []

    def write(self, name: str, data: str | bytes) -> Path:
        path = atomic_write(self.root / name, data)
        self.written.append(path)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, dumps(obj))

    def path(self, name: str) -> Path:
        p = self.root / name
        self.written.append(p)
        return p

    def rollback(self) -> None:
        for p in self.written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        self.written.clear()

    def names(self) -> list[str]:
        return sorted(str(p.relative_to(self.root)) for p in self.written)


def load_schema(name: str) -> dict:
    """JSON schema shipped for the ``--json`` output of a command."""
    from importlib.resources import files
    return json.loads(files("haffsim").joinpath("schemas", f"{name}.schema.json").read_text())
