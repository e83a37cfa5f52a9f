"""Desk-scale radio/inertial positioning sandbox.

Simulates a vehicle moving through a scene of base stations and reflecting
walls, synthesizes ranging/angle/inertial/odometer measurements, and runs a
gated error-state filter that fuses line-of-sight fixes, single-reflection
fixes, and dead reckoning. Ships batch experiment modes for outage and
noise robustness studies.
"""

__version__ = "0.1.0"
