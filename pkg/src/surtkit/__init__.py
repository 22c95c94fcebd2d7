"""surtkit: desk-scale streaming multi-talker speaker-attributed ASR.

Two-branch unmixing + transduction with an auxiliary speaker transducer
synchronized through a shared blank logit, speaker-prefix label
reconciliation across utterance groups, and multi-talker scoring
(ORC-WER / cpWER / WDER).
"""

__version__ = "0.1.0"
