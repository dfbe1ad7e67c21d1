import logging
import os
import tempfile
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

import config
from .errors import ConfigError
from .graph import validation_position
from .schemas import RunConfig

logger = logging.getLogger(__name__)


class Workspace:
    """Validates output locations up front and writes artifacts atomically."""

    def __init__(self, presets_dir: Optional[Path] = None):
        self.presets_dir = Path(presets_dir or config.PRESETS_DIR)

    def check_output(self, path) -> Path:
        path = Path(path)
        if not path.parent.is_dir():
            raise ConfigError(f"Output directory does not exist: {path.parent}")
        if path.is_dir():
            raise ConfigError(f"Output path is a directory: {path}")
        return path

    def check_input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Input file not found: {path}")
        return path

    def read_text(self, path) -> str:
        return self.check_input(path).read_text(encoding="utf-8")

    def write_text(self, path, text: str) -> Path:
        path = self.check_output(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.info(f"Wrote {path}")
        return path

    # --- PRESETS ---

    def list_presets(self) -> List[str]:
        if not self.presets_dir.is_dir():
            return []
        return sorted(p.stem for p in self.presets_dir.glob("*.json"))

    def load_preset(self, name: str) -> RunConfig:
        path = self.presets_dir / f"{name}.json"
        if not path.is_file():
            raise ConfigError(f"Unknown preset '{name}', available: {', '.join(self.list_presets())}")
        return parse_run_config(path.read_text(encoding="utf-8"), str(path))

    def load_run_config(self, ref: str) -> RunConfig:
        """A path to a run-config JSON file, or the name of a shipped preset."""
        path = Path(ref)
        if path.is_file():
            return parse_run_config(path.read_text(encoding="utf-8"), str(path))
        return self.load_preset(ref)


def parse_run_config(text: str, source: str = "run config") -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        msg, loc = validation_position(e)
        raise ConfigError(f"Invalid {source}{' at ' + loc if loc else ''}: {msg}") from e
