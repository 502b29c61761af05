"""Learn stochastic dynamics from transition pairs with a residual generative
Markov network trained on multi-scale MMD."""

__version__ = "0.1.0"
