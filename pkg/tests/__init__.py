"""Test suite for survival-latent-balance."""
