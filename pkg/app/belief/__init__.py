"""Exact interventional / conditional belief over the hidden latent."""
