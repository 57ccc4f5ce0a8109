"""Entity-graph masked latent diffusion pretraining for image patches."""

__version__ = "0.1.0"
