"""Desk-scale laboratory for clinical dialogue section classification and summarization.

The pipeline mirrors a two-subtask setup: dialogues are classified into one
of twenty clinical-note section headers, and summarized into section text.
Both models are tiny transformers trained from scratch (optionally through
low-rank adapters over frozen base weights), decoded with tunable beam
search, and combined across cross-validation folds by logit averaging
(classification) and medoid post-ensemble selection (summarization).
"""

__version__ = "0.1.0"
