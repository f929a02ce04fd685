"""Multisensory-incongruity exploration engine.

Intrinsic rewards from cross-modal misalignment (contrastive alignment
across sensor channels) and from policy sensitivity to modality dropout,
trained with PPO on built-in desk-scale environments.
"""

__version__ = "0.1.0"
