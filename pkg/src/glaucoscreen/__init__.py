"""Glaucoma screening from fundus images.

Segments optic disc and cup with a numpy U-Net, measures cup-to-disc ratios
and ISNT rim notching, and classifies eyes with an RBF-kernel SVM.
"""

__version__ = "0.1.0"
