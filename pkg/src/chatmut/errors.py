"""Exception hierarchy shared by every chatmut module."""

from __future__ import annotations


class ChatmutError(Exception):
    """Base class for all errors raised by chatmut."""


class MissingAgentManifest(ChatmutError):
    pass


class MalformedDocument(ChatmutError):
    def __init__(self, path: str, cause: object):
        super().__init__(f"{path}: {cause}")
        self.path = path
        self.cause = cause


class PathNotFound(ChatmutError):
    pass


class IoFailure(ChatmutError):
    def __init__(self, path: str, cause: object):
        super().__init__(f"{path}: {cause}")
        self.path = path
        self.cause = cause


class DestinationNotEmpty(ChatmutError):
    pass


class UnknownOperator(ChatmutError):
    pass


class StaleDescriptor(ChatmutError):
    pass


class SelfReplacement(ChatmutError):
    pass


class ConfigInvalid(ChatmutError):
    pass


class SourceLoadFailed(ChatmutError):
    pass


class OutputUnwritable(ChatmutError):
    pass


class MutantLoadFailed(ChatmutError):
    pass


class ConvoParseError(ChatmutError):
    pass


class SuiteFailsOnOriginal(ChatmutError):
    def __init__(self, failures):
        names = ", ".join(f.script for f in failures)
        super().__init__(f"suite fails on the original agent: {names}")
        self.failures = list(failures)
