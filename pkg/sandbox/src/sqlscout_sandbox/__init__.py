"""Interpreter worker package for the code-execution tool.

The worker process speaks newline-delimited JSON over stdin/stdout; see
``worker.py`` for the protocol. It deliberately has no dependency on the
host package so either side can be upgraded independently.
"""

__version__ = "0.1.0"
