"""circq: query entailment over circumscribed description-logic knowledge
bases, decided by bounded countermodel search."""
from __future__ import annotations

__version__ = "0.1.0"
