"""Tool-driven text-to-SQL agent framework.

The package is organized in layers: ``dblayer`` (database access, result
model, output equivalence), ``tools`` (the exploration/execution tool
registry), ``context`` (pre-planning preprocessing and schema routing),
``agent`` (LLM backends and the generic tool loop), ``pipeline`` (planning,
synthesis, repair, voting, transpilation), ``evalharness`` (benchmark
metrics), and ``service``/``cli`` (the HTTP surface and its thin client).
"""

__version__ = "0.1.0"
