"""Exception hierarchy shared by every module."""


class CrackRestoreError(Exception):
    """Base class for all pipeline errors."""


class DimensionError(CrackRestoreError, ValueError):
    pass


class ArgumentError(CrackRestoreError, ValueError):
    pass


class StateError(CrackRestoreError, RuntimeError):
    pass


class ConfigError(CrackRestoreError):
    """Bad configuration key or value. The CLI maps this to exit code 2."""


class LayoutError(CrackRestoreError):
    pass


class PairingError(CrackRestoreError):
    pass


class CheckpointError(CrackRestoreError):
    pass


class NumericError(CrackRestoreError, FloatingPointError):
    def __init__(self, component, value):
        super().__init__(f"non-finite value {value!r} in loss component '{component}'")
        self.component = component
        self.value = value
