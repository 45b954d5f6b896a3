"""Exception types shared across the package."""


class PersonaLocoError(Exception):
    """Base class for all package-specific errors."""


# kinematics
class DegenerateRotation(PersonaLocoError):
    """6D rotation input has near-zero or near-parallel columns."""


class NotARotation(PersonaLocoError):
    """Matrix fails the orthonormality / det(+1) check."""


class DegenerateShape(PersonaLocoError):
    """Shape vector drives a bone length to (near) zero."""


# motion data
class ClipTooShort(PersonaLocoError):
    """Clip has fewer frames than the operation requires."""


class DegenerateFacing(PersonaLocoError):
    """Pivot frame has no well-defined ground-plane facing."""


class InvalidGaitSpec(PersonaLocoError):
    """Gait generator parameters out of range."""


class ParseError(PersonaLocoError):
    """File payload is malformed; message carries offset context."""


class VersionMismatch(PersonaLocoError):
    """File version not supported by this build."""


# conditioning
class EmptyText(PersonaLocoError):
    """Text to embed is empty after tokenization."""


class ProviderFailure(PersonaLocoError):
    """Text-embedding provider failed to produce a vector."""


class UnknownPersona(PersonaLocoError):
    """persona_id not present in the bank/registry."""


class PoolExhausted(PersonaLocoError):
    """No rare identifier tokens left to allocate."""


# diffusion / denoiser
class BadScheduleParams(PersonaLocoError):
    """Noise schedule parameters violate (0,1) constraints."""


class ShapeMismatch(PersonaLocoError):
    """Tensor/array arguments have incompatible shapes."""


class NonFiniteActivation(PersonaLocoError):
    """Denoiser produced NaN/Inf activations."""


class NonFiniteGradient(PersonaLocoError):
    """Training step saw NaN/Inf gradients; step aborted."""


class ConfigMismatch(PersonaLocoError):
    """Checkpoint config incompatible with the requested one."""


# finetune
class InsufficientExamples(PersonaLocoError):
    """Not enough example motion to characterize a persona."""


class TopologyMismatch(PersonaLocoError):
    """Skeleton topology differs from the template."""


# metrics
class TooFewSamples(PersonaLocoError):
    """Not enough samples for the statistic to be defined."""


class LengthMismatch(PersonaLocoError):
    """Sequences to compare have different lengths."""


class InsufficientData(PersonaLocoError):
    """Dataset too small to train/evaluate on."""


class UnknownLabel(PersonaLocoError):
    """Label not covered by the trained classifier."""


class EmptyDatabase(PersonaLocoError):
    """Motion-matching database has no entries."""
