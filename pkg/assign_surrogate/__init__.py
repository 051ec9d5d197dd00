"""
AssignSurrogate - Assignment-conditioned traffic surrogate laboratory.

A desk-scale pipeline that generates route assignments for a fixed travel
demand, simulates them with a deterministic mesoscopic queue simulator, and
trains a neural surrogate that predicts per-cell flows and system-wide travel
time for unseen assignments.
"""

__version__ = "0.1.0"
