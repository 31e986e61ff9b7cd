"""Versioned prompt-template assets.

Templates live under assets/templates/<version>/ as plain text with
{slot_name} placeholders.  The pack digest goes into run provenance so
every artifact is attributable to an exact prompt version.
"""

from __future__ import annotations

import re
from pathlib import Path

from .canonical import normalize_text, sha256_hex
from .errors import ConfigError

TEMPLATE_VERSION = "v1"
SLOT_PATTERN = re.compile(r"\{([a-z][a-z0-9_]*)\}")
_ASSET_ROOT = Path(__file__).parent / "assets" / "templates"


class TemplatePack:
    """All prompt templates of one version, loaded once."""

    def __init__(self, version: str = TEMPLATE_VERSION, root: str | Path | None = None):
        self.version = version
        self.root = Path(root) if root else _ASSET_ROOT / version
        if not self.root.is_dir():
            raise ConfigError(f"template pack {version!r} not found at {self.root}")
        self._templates: dict[str, str] = {}
        for path in sorted(self.root.glob("*.txt")):
            self._templates[path.stem] = normalize_text(path.read_text(encoding="utf-8"))
        if not self._templates:
            raise ConfigError(f"template pack {version!r} is empty at {self.root}")

    def names(self) -> list[str]:
        return sorted(self._templates)

    def raw(self, name: str) -> str:
        try:
            return self._templates[name]
        except KeyError:
            raise ConfigError(
                f"unknown template {name!r} in pack {self.version!r} "
                f"(have: {self.names()})"
            ) from None

    def fill(self, name: str, **slots: str) -> str:
        """Instantiate a template, requiring every declared slot."""
        template = self.raw(name)
        required = set(SLOT_PATTERN.findall(template))
        missing = required - set(slots)
        if missing:
            raise ConfigError(
                f"template {name!r} is missing slot values for {sorted(missing)}"
            )
        text = template
        for key, value in slots.items():
            text = text.replace("{" + key + "}", str(value))
        return text

    def digest(self) -> str:
        """Content hash over every template in the pack, order-stable."""
        joined = "\n".join(
            f"{name}\n{self._templates[name]}" for name in self.names()
        )
        return sha256_hex(f"{self.version}\n{joined}")
