"""Exception types raised by the toolkit."""


class GaussBevError(Exception):
    """Base class for all domain errors (CLI maps these to exit code 1)."""


class ZeroQuaternion(GaussBevError):
    def __init__(self, pixel=None):
        self.pixel = pixel
        where = "" if pixel is None else f" at pixel {pixel}"
        super().__init__(f"raw quaternion has (near) zero norm{where}")


class FeatureDimMismatch(GaussBevError):
    pass


class ConfigMismatch(GaussBevError):
    pass


class EmptyMask(GaussBevError):
    pass


class NonPositiveDepth(GaussBevError):
    pass


class UnknownPreset(GaussBevError):
    pass


class DivergenceDetected(GaussBevError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"loss became non-finite at step {step}")


class BadMagic(GaussBevError):
    pass


class VersionUnsupported(GaussBevError):
    pass


class TruncatedFile(GaussBevError):
    pass


class ValidationFailed(GaussBevError):
    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:5])
        super().__init__(f"{len(self.violations)} invariant violation(s): {head}")


class MalformedHeader(GaussBevError):
    pass


class CalibError(GaussBevError):
    pass
