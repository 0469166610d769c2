"""Desk-scale undersampled-MRI reconstruction testbed.

Frequency-pyramid attention, hash-grouped sparse attention, multi-scale
feed-forward fusion and expert-gated refinement, assembled into an
encoder-decoder with an FFT data-consistency layer, trained end-to-end on
synthetic phantoms. Everything runs on a minimal numpy autodiff substrate so
every gradient can be finite-difference checked.
"""

__version__ = "0.1.0"
