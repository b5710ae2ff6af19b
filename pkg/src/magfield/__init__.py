"""Eulerian motion magnification for videos and radiance fields.

Submodules:

- ``temporal``: ideal DFT bandpass and in-band amplification
- ``pyramid``: complex steerable and Laplacian pyramids
- ``magnify2d``: linear and phase-based video magnification
- ``field``: cameras, encodings, tri-planes, projection MLP, volume rendering
- ``train``: analytic gradients, Adam, static fits and per-timestep finetunes
- ``magnify3d``: magnification in embedding space
- ``harness``: analytic scenes, metrics, displacement measurement
- ``io`` and ``cli``: file formats and the ``magfield`` command
"""

from .errors import InputError, MagfieldError, ParameterError, StructureError, TrainingError
from .magnify2d import FrameSequence, linear_magnify, phase_magnify
from .magnify3d import MagnificationRequest, magnify
from .temporal import BandpassSpec, amplify_band, ideal_bandpass

__version__ = "0.1.0"

__all__ = [
    "BandpassSpec",
    "FrameSequence",
    "InputError",
    "MagfieldError",
    "MagnificationRequest",
    "ParameterError",
    "StructureError",
    "TrainingError",
    "amplify_band",
    "ideal_bandpass",
    "linear_magnify",
    "magnify",
    "phase_magnify",
]
