"""One-shot episodic image memory with an extended Omniglot benchmark harness."""

__version__ = "0.1.0"
