"""Three-tier fault taxonomy shared by simulators and the classifier."""

import enum


class FaultClass(enum.Enum):
    NONE = "None"
    CONTROL_FLOW = "ControlFlow"
    DATA_CORRUPTION = "DataCorruption"
    SYSTEM_LEVEL = "SystemLevel"

    @classmethod
    def parse(cls, value) -> "FaultClass":
        if isinstance(value, FaultClass):
            return value
        for c in cls:
            if value in (c.value, c.name):
                return c
        raise ValueError(f"unknown fault class {value!r}")


FAULT_CLASSES = (FaultClass.CONTROL_FLOW, FaultClass.DATA_CORRUPTION, FaultClass.SYSTEM_LEVEL)


class FaultDetail(enum.Enum):
    NONE = "None"
    SKIP = "Skip"
    EARLY_EXIT = "EarlyExit"
    LOOP_COUNT_MISMATCH = "LoopCountMismatch"
    CRC_MISMATCH = "CrcMismatch"
    BIT_FLIPS = "BitFlips"
    REGISTER_DEVIATION = "RegisterDeviation"
    HANG = "Hang"
    RESET = "Reset"
    HALT = "Halt"
    MALFORMED_OUTPUT = "MalformedOutput"

    @property
    def fault_class(self) -> FaultClass:
        return _DETAIL_CLASS[self]

    @classmethod
    def parse(cls, value) -> "FaultDetail":
        if isinstance(value, FaultDetail):
            return value
        for d in cls:
            if value in (d.value, d.name):
                return d
        raise ValueError(f"unknown fault detail {value!r}")


_DETAIL_CLASS = {
    FaultDetail.NONE: FaultClass.NONE,
    FaultDetail.SKIP: FaultClass.CONTROL_FLOW,
    FaultDetail.EARLY_EXIT: FaultClass.CONTROL_FLOW,
    FaultDetail.LOOP_COUNT_MISMATCH: FaultClass.CONTROL_FLOW,
    FaultDetail.CRC_MISMATCH: FaultClass.DATA_CORRUPTION,
    FaultDetail.BIT_FLIPS: FaultClass.DATA_CORRUPTION,
    FaultDetail.REGISTER_DEVIATION: FaultClass.DATA_CORRUPTION,
    FaultDetail.HANG: FaultClass.SYSTEM_LEVEL,
    FaultDetail.RESET: FaultClass.SYSTEM_LEVEL,
    FaultDetail.HALT: FaultClass.SYSTEM_LEVEL,
    FaultDetail.MALFORMED_OUTPUT: FaultClass.SYSTEM_LEVEL,
}
