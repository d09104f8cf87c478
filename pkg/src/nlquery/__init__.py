"""nlquery: a natural-language query engine for relational databases.

Questions are answered by retrieving schema and business-rule context from a
vector index, generating SQL with a pluggable LLM backend, validating it
syntactically (guarded dry-run) and semantically (LLM introspection),
refining on failure, and narrating the result. Ships with an HTTP service,
a CLI, and a benchmark harness.
"""

__version__ = "0.1.0"
