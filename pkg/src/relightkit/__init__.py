"""relightkit: deterministic scene reconstruction and relighting.

The package turns simulated range and camera data into lighting-aware
digital twins (triangle meshes with baked vertex albedo plus HDR sky
domes) and relights camera frames through G-buffers and shadow-ratio
maps.  Every stage is seeded and counter-based, so outputs are
bit-reproducible across runs and thread counts.
"""

__version__ = "0.1.0"

FB_FORMAT_REVISION = "FB01"
SCENE_GRAMMAR_REVISION = "scene-v1"
