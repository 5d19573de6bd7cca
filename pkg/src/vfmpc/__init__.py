"""Visual-foresight MPC engine and control-centric forward-model benchmark.

The package plans object pushes in a deterministic 2-D world by rolling an
action-conditioned forward model and scoring predicted frames against a goal
image, then scores forward models by downstream pushing success.
"""

__version__ = "0.1.0"
