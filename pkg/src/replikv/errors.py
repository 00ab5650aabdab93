"""Exception types shared across the package."""


class ReplikvError(Exception):
    """Base class for all package errors."""


class CodecError(ReplikvError):
    """Malformed bytes or a value that does not conform to its schema."""


class ConfigError(ReplikvError):
    """Invalid server, client, or descriptor configuration."""


class StorageError(ReplikvError):
    """Storage engine failure (closed engine, I/O error)."""


class QueueFullError(ReplikvError):
    """Outbound channel reached its undelivered-message capacity."""

    def __init__(self, destination: str, capacity: int):
        super().__init__(f"outbound queue to {destination} full (capacity {capacity})")
        self.destination = destination
        self.capacity = capacity


class UnknownDestinationError(ReplikvError):
    """Destination node id is not in the peer/server map."""


class ReplyTimeoutError(ReplikvError):
    """No reply arrived from the server within the configured timeout."""


class DuplicateReplyError(ReplikvError):
    """A handler attempted to reply twice to one client request."""


class DuplicateNodeError(ReplikvError):
    """Two servers registered under the same node id."""


class QueryError(ReplikvError):
    """Aggregation query failed to parse or referenced unknown names."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset
