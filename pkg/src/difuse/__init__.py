"""Diffusion-coupled infrared/visible image fusion with text-driven re-modulation.

The package restores degraded source images with a conditional diffusion model
(learned-variance DDPM) and merges the two modalities inside every reverse
sampling step through a small attention-based fusion control network.  An
optional mask-driven re-modulation block rescales the fusion weights so that
objects named by a text command stand out in the final image.
"""

__version__ = "0.1.0"
