"""Wavelet-domain denoising CNN with band-discriminative training."""
