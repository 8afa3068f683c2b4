"""Multi-document quantitative QA benchmark harness for financial filings.

Builds template-based question sets with gold answers and provenance from a
fact table, runs retrieval-augmented QA pipelines (including a plan-language
program-of-thought system), and scores retrieval and answer accuracy.
"""

__version__ = "0.1.0"
