"""Screenshot-to-DSL generation with an attention-based hierarchical decoder."""

__version__ = "0.1.0"
