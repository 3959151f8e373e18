"""
SiamAdapt - Package
Compact latent adaptation for Siamese trackers: toy cores, CLNet, training, tracking and evaluation
"""

__version__ = "1.0.0"
__author__ = "SiamAdapt Team"
