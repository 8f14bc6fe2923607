"""Project sessions: the durable record of a co-registration workspace.

A session lives as pretty-printed JSON (`project.json`) inside a project
directory.  Saves are crash-safe: the file is written to a temp sibling,
fsynced, then atomically renamed over the previous version, so a torn write
can never corrupt the last valid state.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

from .errors import CorruptHeader, DimensionMismatch, MissingFile, PersistFailure
from .stitching import TilePlacement

PROJECT_FILE = "project.json"
SCHEMA = "flimreg.project/1"


@dataclass
class WsiRef:
    wsi_id: str
    path: str
    width: int
    height: int

    def to_json(self) -> dict:
        return {"id": self.wsi_id, "path": self.path,
                "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, d: dict) -> "WsiRef":
        return cls(str(d["id"]), str(d["path"]),
                   int(d["width"]), int(d["height"]))


@dataclass
class HypercubeRef:
    tile_id: str
    manifest_path: str

    def to_json(self) -> dict:
        return {"id": self.tile_id, "manifest_path": self.manifest_path}

    @classmethod
    def from_json(cls, d: dict) -> "HypercubeRef":
        return cls(str(d["id"]), str(d["manifest_path"]))


@dataclass
class ProjectSession:
    """WSI reference, registered hypercubes, and accepted placements."""

    wsi: WsiRef | None = None
    hypercubes: list[HypercubeRef] = field(default_factory=list)
    placements: list[TilePlacement] = field(default_factory=list)
    accepted_registrations: list[str] = field(default_factory=list)

    def validate(self) -> None:
        tile_ids = {h.tile_id for h in self.hypercubes}
        for p in self.placements:
            if p.tile_id not in tile_ids:
                raise DimensionMismatch(
                    f"placement references unknown hypercube {p.tile_id!r}")
            if self.wsi is not None:
                if (p.patch.x < 0 or p.patch.y < 0
                        or p.patch.x + p.patch.w > self.wsi.width
                        or p.patch.y + p.patch.h > self.wsi.height):
                    raise DimensionMismatch(
                        f"patch for tile {p.tile_id!r} outside WSI bounds")

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "wsi": self.wsi.to_json() if self.wsi else None,
            "hypercubes": [h.to_json() for h in self.hypercubes],
            "placements": [p.to_json() for p in self.placements],
            "accepted_registrations": list(self.accepted_registrations),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProjectSession":
        if d.get("schema") != SCHEMA:
            raise CorruptHeader(f"unknown project schema {d.get('schema')!r}")
        session = cls(
            wsi=WsiRef.from_json(d["wsi"]) if d.get("wsi") else None,
            hypercubes=[HypercubeRef.from_json(h)
                        for h in d.get("hypercubes", [])],
            placements=[TilePlacement.from_json(p)
                        for p in d.get("placements", [])],
            accepted_registrations=[str(v) for v in
                                    d.get("accepted_registrations", [])],
        )
        session.validate()
        return session


def save_session(session: ProjectSession, project_dir: str) -> None:
    """Atomically persist the session (write temp, fsync, rename)."""
    session.validate()
    path = os.path.join(project_dir, PROJECT_FILE)
    payload = json.dumps(session.to_json(), indent=2)
    fd, tmp = tempfile.mkstemp(dir=project_dir, prefix=".project-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise PersistFailure(f"cannot persist session: {exc}") from exc


def load_session(project_dir: str) -> ProjectSession:
    path = os.path.join(project_dir, PROJECT_FILE)
    if not os.path.isfile(path):
        raise MissingFile(f"no {PROJECT_FILE} in {project_dir}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptHeader(f"invalid project.json: {exc}") from exc
    except OSError as exc:
        raise PersistFailure(f"cannot read project.json: {exc}") from exc
    return ProjectSession.from_json(data)
