"""Desk-scale table-reasoning training pipeline.

Synthetic table-QA environment with brute-force oracles, reasoning-trace
curation with reject sampling, rule-based format/accuracy rewards, GRPO on an
analytic linear-softmax policy, and an LLM-as-judge evaluation harness.
"""

__version__ = "0.1.0"
