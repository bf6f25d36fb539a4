"""Desk-scale multichannel speaker-attributed ASR pipeline.

Simulated multichannel mixtures, two feature frontends, a cross-channel
Conformer encoder, a profile-conditioned decoder with serialized
multi-speaker output, meeting segmentation, and a scoring suite.
"""

__version__ = "0.1.0"
