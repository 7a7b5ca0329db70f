"""Edge-guided PatchMatch multi-view stereo on CPU."""

__version__ = "0.1.0"
