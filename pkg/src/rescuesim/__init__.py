"""Emergency-rescue traffic simulator with QMIX / IQL multi-agent learners."""

__version__ = "0.1.0"
