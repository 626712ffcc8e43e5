"""Plain key=value config files; flags beat config entries beat defaults."""

from __future__ import annotations

import os


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


class Settings:
    """Layered lookup: explicit flag value, then config file, then default."""

    def __init__(self, config_path: str | None = None):
        self.values = parse_config_file(config_path) if config_path else {}
        if config_path:
            self.base_dir = os.path.dirname(os.path.abspath(config_path))
        else:
            self.base_dir = os.getcwd()

    def get(self, key: str, flag_value, default):
        if flag_value is not None:
            return flag_value
        if key in self.values:
            raw = self.values[key]
            if isinstance(default, bool):
                return raw.lower() in ("1", "true", "yes", "on")
            if isinstance(default, int) and not isinstance(default, bool):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
            return raw
        return default
