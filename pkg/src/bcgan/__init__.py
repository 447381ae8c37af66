"""
Bayesian conditional GAN package
Image-to-image translation with concrete dropout, dropout testing and recalibrated uncertainty
"""

__version__ = "0.1.0"
