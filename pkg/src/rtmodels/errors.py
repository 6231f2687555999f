"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RuntimeModelError(Exception):
    """Base class for every error raised by rtmodels."""


# -- kernel -------------------------------------------------------------------

class MetamodelError(RuntimeModelError):
    pass


class ModelError(RuntimeModelError):
    pass


class DuplicateUid(ModelError):
    pass


class UnknownUid(ModelError):
    pass


class AbstractTypeInstantiation(ModelError):
    pass


class AttributeKindMismatch(ModelError):
    pass


class UnknownAttribute(ModelError):
    pass


class UnknownReference(ModelError):
    pass


class ContainmentError(ModelError):
    pass


class ForeignMetamodel(ModelError):
    pass


class DirectAccessViolation(RuntimeModelError):
    """Manager code touched the source model or the container directly."""


# -- engine / rules -----------------------------------------------------------

class MalformedRule(RuntimeModelError):
    pass


class RuleConflict(RuntimeModelError):
    pass


class UnsynchronizableChange(RuntimeModelError):
    pass


class EngineStateError(RuntimeModelError):
    """An engine operation was called in a state its contract excludes."""


class InterleavedChanges(EngineStateError):
    """Both sides carry pending changes; only one direction may be synced at a time."""


class RuleParseError(RuntimeModelError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0] if self.diagnostics else None
        msg = str(first) if first else "rule parse failed"
        if len(self.diagnostics) > 1:
            msg += f" (+{len(self.diagnostics) - 1} more)"
        super().__init__(msg)


# -- platform -----------------------------------------------------------------

class PlatformError(RuntimeModelError):
    pass


class IllegalTransition(PlatformError):
    pass


class UnwiredStart(PlatformError):
    pass


class NotStarted(PlatformError):
    pass


class UnknownEntity(PlatformError):
    pass


class UnmappableChange(PlatformError):
    """A source-model change that has no effector counterpart."""


class NonEmptyContainer(PlatformError):
    pass


# -- adaptation ---------------------------------------------------------------

class OperatorViolation(RuntimeModelError):
    """A manager attempted a change outside the permitted operator set."""

    def __init__(self, operator: str, reason: str):
        self.operator = operator
        self.reason = reason
        super().__init__(f"{operator}: {reason}")


class UnknownComponentType(OperatorViolation):
    pass


class UnknownProperty(OperatorViolation):
    pass


class UnknownConnector(OperatorViolation):
    pass


class UnknownComponent(OperatorViolation):
    pass


class RoleMismatch(OperatorViolation):
    pass


class TypeMismatch(OperatorViolation):
    pass


class AlreadyWired(OperatorViolation):
    pass


class StillDeployed(OperatorViolation):
    pass


class StillWired(OperatorViolation):
    pass


class TypeInUse(OperatorViolation):
    pass


class IllegalLifecycleChange(OperatorViolation, IllegalTransition):
    pass


class UnwiredStartViolation(OperatorViolation, UnwiredStart):
    pass


class PendingChanges(RuntimeModelError):
    pass


class FactoryFailure(RuntimeModelError):
    pass


class NoAlternativeType(RuntimeModelError):
    pass
