"""Risk-neutral-equivalent pricing of binary model risk.

Belief inference on a log-likelihood-ratio diffusion, canonical pricing
with a conserved risk loading K, closed-form momentum and low-risk cohort
curves, a cross-sectional market simulator, and recovery of (K, rho) from
the volatility-conditioned excess curve.
"""

__all__ = ["__version__"]

__version__ = "0.1.0"
