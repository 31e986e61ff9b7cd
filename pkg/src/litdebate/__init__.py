"""Literature-grounded multi-agent hypothesis pipeline.

Builds time-locked evidence snapshots from a scholarly index, induces
role personas from corpus excerpts, runs a citation-validated
three-round debate with moderator synthesis, and evaluates ablation
conditions with a blinded rubric judge.
"""

from __future__ import annotations

__version__ = "0.1.0"
