"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class AsmragError(Exception):
    """Base class for all pipeline errors."""


# --- listing ingest ---------------------------------------------------------

class MalformedHeader(AsmragError):
    """A function header line (or jsonl record) could not be parsed."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyFunction(AsmragError):
    """A function header with zero instruction lines."""


class DuplicateAddress(AsmragError):
    """Two functions of the same sample share a start address."""


# --- embedding --------------------------------------------------------------

class RemoteUnavailable(AsmragError):
    """Embedding/generation endpoint unreachable after retries (retryable)."""


class DimMismatch(AsmragError):
    """Vector width differs from the expected dimension."""


class EmptyText(AsmragError):
    """embed_batch received an empty batch or an empty text."""


class ZeroVector(AsmragError):
    """Normalization of a vector with near-zero norm was requested."""


# --- knowledge base ---------------------------------------------------------

class EmptyKb(AsmragError):
    """Search against a knowledge base with no entries."""


class VersionMismatch(AsmragError):
    """KB directory has no manifest or an unsupported format version."""


class CorruptManifest(AsmragError):
    """KB payload does not match the manifest checksums or layout."""


class MissingFamily(AsmragError):
    """A malicious entry (or a promotion) lacks a family label."""


# --- library filter ---------------------------------------------------------

class EmptyLibIndex(AsmragError):
    """Semantic filtering requested against an empty library index."""


class EmptyGrid(AsmragError):
    """Threshold calibration invoked with an empty grid."""


# --- detector ---------------------------------------------------------------

class DegenerateWeights(AsmragError):
    """Similarity weights of a neighborhood sum to ~0 (reported, not raised
    on the scoring path; see detector.alpha_from_neighborhood)."""


class NoFunctions(AsmragError):
    """A sample reached scoring with zero surviving functions."""


class NoMaliciousNeighbors(AsmragError):
    """Flagged functions exist but no malicious neighbor was retrieved."""


class NoFamilyNeighbors(AsmragError):
    """No flagged function has any neighbor in the attributed family."""


# --- calibration ------------------------------------------------------------

class NoFeasibleRow(AsmragError):
    """Every grid point violates the function-level FPR cap."""


# --- evaluation harness -----------------------------------------------------

class OverlappingWindows(AsmragError):
    """Chronological split windows intersect."""


class MissingDate(AsmragError):
    """A corpus record lacks a first-seen date."""


class MissingOptLevel(AsmragError):
    """A source-compiled record lacks an optimization level."""


# --- explanation ------------------------------------------------------------

class EmptyCompletion(AsmragError):
    """The generation endpoint returned an empty completion."""


# --- triage service ---------------------------------------------------------

class BenignVerdict(AsmragError):
    """Attempt to enqueue a verdict that is not malicious-with-anchor."""


class AlreadyResolved(AsmragError):
    """Resolve called on an item that is no longer pending."""


class UnknownItem(AsmragError):
    """Queue lookup for an item id that does not exist."""


class BindFailure(AsmragError):
    """The service could not bind its listen port."""


class KbLocked(AsmragError):
    """Another service instance holds the KB directory lock."""
