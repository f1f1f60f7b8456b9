"""Conditioning-signal pipeline for driving-video generation: instance flow,
3D box projection with occlusion-aware layouts, procedural scenarios, and a
toy ST-DiT with ControlNet-style injection."""

__version__ = "0.1.0"
