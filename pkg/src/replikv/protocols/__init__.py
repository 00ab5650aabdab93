"""Protocol registry: maps protocol names to server/session classes."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    server_cls: type
    session_cls: type
    preferred_versioning: str


_registry: dict[str, ProtocolSpec] | None = None


def _load() -> dict[str, ProtocolSpec]:
    global _registry
    if _registry is None:
        from . import causalspartan, cops, eventual, gentlerain

        _registry = {
            "eventual": ProtocolSpec(
                "eventual", eventual.EventualServer, eventual.EventualSession, "single"
            ),
            "cops": ProtocolSpec("cops", cops.CopsServer, cops.CopsSession, "multi"),
            "gentlerain": ProtocolSpec(
                "gentlerain", gentlerain.GentleRainServer, gentlerain.GentleRainSession, "multi"
            ),
            "causalspartan": ProtocolSpec(
                "causalspartan",
                causalspartan.CausalSpartanServer,
                causalspartan.CausalSpartanSession,
                "multi",
            ),
        }
    return _registry


def get_protocol(name: str) -> ProtocolSpec:
    registry = _load()
    try:
        return registry[name]
    except KeyError:
        raise ConfigError(f"unknown protocol {name!r}; known: {sorted(registry)}") from None


def protocol_names() -> list[str]:
    return sorted(_load())
