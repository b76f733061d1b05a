"""Relightable neural-field engine.

A scene is a pair of tri-planes: one carries lighting-independent albedo
and geometry features, the other carries the shading of a single lighting
condition, tagged with its 9 spherical-harmonic coefficients.  Everything
else in the package moves scenes in and out of that representation:
volumetric rendering with hand-derived gradients, per-scene inverse
fitting, analytic relighting, tri-plane sequence smoothing, and a
websocket service that streams rendered frames to interactive clients.
"""

__version__ = "0.1.0"

__all__ = [
    "camera",
    "cli",
    "fast",
    "fileio",
    "fit",
    "metrics",
    "protocol",
    "render",
    "service",
    "sh",
    "synth",
    "temporal",
    "triplane",
]
