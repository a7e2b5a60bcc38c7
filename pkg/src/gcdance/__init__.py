"""Genre-conditioned music-to-dance diffusion at desk scale."""

__version__ = "0.1.0"
