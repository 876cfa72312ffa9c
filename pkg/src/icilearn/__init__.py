"""Queue-aware multi-cell downlink control with per-user online learning.

Modules: ``model`` (shared types), ``channel``, ``queueing``, ``oracle``
(exhaustive solver), ``learner``, ``control``, ``baselines``, ``sim`` (slot
engine), ``report`` and ``cli``.
"""

__version__ = "0.1.0"
