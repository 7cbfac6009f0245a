"""Knowledge distillation through feature distribution matching (KD2M).

A small numpy toolkit: optimal transport and Gaussian distribution metrics,
a from-scratch MLP engine, the distillation training loop, and numerical
checks of the Wasserstein risk bounds.
"""

__version__ = "0.1.0"
