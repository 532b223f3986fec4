"""armcheck: interpret robot programs into motion traces, audit them with
safety critics, and close an LLM-backed fix loop."""

__version__ = "0.1.0"
