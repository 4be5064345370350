"""Assembly-level retrieval-augmented malware triage."""

__version__ = "0.1.0"
