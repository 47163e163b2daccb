"""Exception hierarchy.

Every error carries a module-qualified ``code`` so the CLI can report it as
machine-readable JSON without string parsing.
"""


class CrowdSteerError(Exception):
    module = "crowdsteer"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details

    @property
    def code(self):
        return f"{self.module}.{type(self).__name__}"

    def to_dict(self):
        out = {"code": self.code, "message": str(self)}
        if self.details:
            out["details"] = {k: _jsonable(v) for k, v in self.details.items()}
        return out


def _jsonable(v):
    try:
        import numpy as np

        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, np.generic):
            return v.item()
    except ImportError:  # pragma: no cover
        pass
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# measure_core
class MeasureError(CrowdSteerError):
    module = "measure_core"


class DegenerateMeasure(MeasureError):
    pass


class MarginCollapse(MeasureError):
    pass


class InvalidMeasure(MeasureError):
    pass


# flow_engine
class FlowError(CrowdSteerError):
    module = "flow_engine"


class NonFiniteState(FlowError):
    pass


# wasserstein
class DistanceError(CrowdSteerError):
    module = "wasserstein"


class MassMismatch(DistanceError):
    pass


class ZeroMass(DistanceError):
    pass


class SizeCap(DistanceError):
    pass


# control_synthesis
class SynthesisError(CrowdSteerError):
    module = "control_synthesis"


class PlanDegenerate(SynthesisError):
    pass


class SupportViolation(SynthesisError):
    pass


class KTooSmall(SynthesisError):
    pass


class Condition1Violation(SynthesisError):
    pass


# minimal_time
class MinimalTimeError(CrowdSteerError):
    module = "minimal_time"


class HorizonExceeded(MinimalTimeError):
    pass


class BucketMassDeficit(MinimalTimeError):
    pass


class HorizonTooShort(MinimalTimeError):
    pass


# rarefaction
class RarefactionError(CrowdSteerError):
    module = "rarefaction"


class DegenerateWindow(RarefactionError):
    pass


class WindowOverflow(RarefactionError):
    pass


# cli
class CliError(CrowdSteerError):
    module = "cli"


class ParseError(CliError):
    pass


class ValidationError(CliError):
    pass
