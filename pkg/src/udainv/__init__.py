"""Encoder-based GAN inversion with unsupervised domain adaptation, desk scale.

A frozen differentiable generator renders 16x16 images from an 8-dim latent
code; an encoder learns to invert both clean (source) and degraded (target)
images by minimizing a source reconstruction loss plus a variational
f-divergence discrepancy between the two inverted distributions.
"""

__version__ = "0.1.0"
