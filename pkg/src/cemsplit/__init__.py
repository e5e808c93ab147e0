"""Contrast-independent partially explicit time stepping with CEM-GMsFEM coarse spaces.

Modules: ``fem`` (fine grid), ``coarse`` (coarse partition), ``cem`` (auxiliary
space and CEM bases), ``complement`` (V_{H,2} and stability constants),
``splitting`` (time steppers) and ``experiments`` / ``cli`` (drivers).
"""

__version__ = "0.1.0"
