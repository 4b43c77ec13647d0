from .base import (Backend, BackendError, BackendTimeout, Decoding, GenerationRequest,
                   GenerationResult, MalformedResponse, MissingFixture, RequestRejected,
                   TransportError)
from .fixture import FixtureBackend, RecordingBackend
from .oracle import OracleBackend, oracle_complete
from .remote import RemoteBackend

__all__ = [
    "Backend", "BackendError", "BackendTimeout", "Decoding", "GenerationRequest",
    "GenerationResult", "MalformedResponse", "MissingFixture", "RequestRejected",
    "TransportError", "FixtureBackend", "RecordingBackend", "OracleBackend",
    "oracle_complete", "RemoteBackend",
]
