"""Bundled skeleton presets."""
