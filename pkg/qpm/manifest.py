"""
Run provenance: every output file gets a sidecar manifest that is enough to
reproduce it byte for byte.
"""
import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, List, Optional

from pydantic import BaseModel, ConfigDict, ValidationError

from qpm import __version__
from qpm.exceptions import ConfigError

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = '.manifest.json'


class RunManifest(BaseModel):
    """Command line, effective config, seed and engine version of one output"""

    model_config = ConfigDict(frozen=True)

    command_line: List[str]
    config_snapshot: str
    seed: int
    trials: int
    timestamp: str
    engine_version: str = __version__

    @classmethod
    def create(cls, command_line: List[str], config_snapshot: str, seed: int, trials: int) -> 'RunManifest':
        return cls(
            command_line=list(command_line),
            config_snapshot=config_snapshot,
            seed=seed,
            trials=trials,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )


def manifest_path(output: Path) -> Path:
    return output.with_name(output.name + MANIFEST_SUFFIX)


def atomic_write(path: Path, write: Callable[[Path], None]) -> None:
    """
    Write through a temporary file in the target directory, then rename

    A failing writer leaves nothing behind at path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=path.parent)
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_manifest(output: Path, manifest: RunManifest) -> Path:
    target = manifest_path(Path(output))
    atomic_write(target, lambda tmp: tmp.write_text(manifest.model_dump_json(indent=2), encoding='utf-8'))
    logger.info(f"Manifest saved to {target}")
    return target


def load_manifest(path: str) -> RunManifest:
    """
    Raises:
        ConfigError: Missing or malformed manifest
    """
    manifest_file = Path(path)
    if not manifest_file.is_file():
        raise ConfigError(f"manifest not found: {path}", key_path='manifest')
    try:
        return RunManifest(**json.loads(manifest_file.read_text(encoding='utf-8')))
    except (json.JSONDecodeError, TypeError, ValidationError) as e:
        raise ConfigError(f"invalid manifest: {e}", key_path='manifest') from e


def version_mismatch(manifest: RunManifest) -> Optional[str]:
    if manifest.engine_version != __version__:
        return f"manifest written by engine {manifest.engine_version}, running {__version__}"
    return None
