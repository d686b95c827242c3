"""Adverse-weather image restoration at desk scale.

A small, fully self-contained restoration pipeline: a patch-token encoder
conditioned on a degradation prior via cross-attention, a learnable prototype
memory bank queried by cosine similarity, and a residual decoder, trained with
a Charbonnier + perceptual objective. Everything runs on numpy with
hand-written backward rules; a finite-difference checker is the correctness
oracle for every gradient in the package.
"""

__version__ = "0.1.0"
