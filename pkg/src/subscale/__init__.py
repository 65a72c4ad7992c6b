"""Scaling-law analysis for over-trained / high-density training regimes.

Subpackages: ``runs`` (ingest, smooth, split), ``laws`` (closed-form
evaluators), ``fit`` (LM fitting and comparison), ``alloc`` (compute
allocation and stability analysis), ``density`` (embedding density and
selection), ``synth`` (deterministic fixtures), ``cli`` (pipeline tool).
"""

__version__ = "0.1.0"
