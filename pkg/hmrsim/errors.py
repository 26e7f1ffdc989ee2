class HmrSimError(Exception):
    """Base class for simulator errors."""


class ConfigError(HmrSimError):
    pass


class FaultLocationError(ConfigError):
    pass


class ContractViolation(HmrSimError):
    pass


class AssemblerError(HmrSimError):
    def __init__(self, line_no: int, line: str, reason: str):
        super().__init__(f"line {line_no}: {reason}: {line.strip()!r}")
        self.line_no = line_no
        self.reason = reason


class HangError(HmrSimError):
    def __init__(self, cycles: int):
        super().__init__(f"cycle limit reached after {cycles} cycles")
        self.cycles = cycles
