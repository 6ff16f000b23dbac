"""Exception hierarchy shared across the package."""


class RankQAError(Exception):
    """Base class for every error raised by rankqa."""


class ConfigError(RankQAError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class RemoteError(RankQAError):
    """Failure talking to an external scoring or extraction service."""


class RemoteTimeout(RemoteError):
    pass


class ProtocolError(RemoteError):
    pass


class TransportError(RemoteError):
    pass


class EndpointUnreachable(RankQAError):
    pass
