"""Exception hierarchy with a stable CLI exit-code contract."""

from __future__ import annotations


class VidpipeError(Exception):
    """Base class; exit_code drives the CLI process status."""

    exit_code = 1


class ConfigurationError(VidpipeError):
    """Bad parameters, config files, or CLI usage."""

    exit_code = 1


class InputError(VidpipeError):
    """Structurally valid config applied to incompatible inputs
    (crop outside frame, target larger than frame, bad geometry)."""

    exit_code = 1


class ProbeError(VidpipeError):
    """Container could not be opened or parsed."""

    exit_code = 2


class DecodeError(VidpipeError):
    """Bitstream-level failure; carries timestamp/sample context."""

    exit_code = 2

    def __init__(self, message: str, *, timestamp: float | None = None,
                 sample_id: str | None = None):
        super().__init__(message)
        self.timestamp = timestamp
        self.sample_id = sample_id


class RangeError(VidpipeError):
    """Requested span outside the known duration of a source."""

    exit_code = 1


class ToolError(VidpipeError):
    """External codec toolchain invocation failed."""

    exit_code = 2


class InfeasiblePlanError(VidpipeError):
    """A planning problem has no feasible solution (e.g. batch size 0)."""

    exit_code = 3
