"""Treatment-effect estimation from observational survival data with a latent prognostic factor."""

__version__ = "0.3.0"
