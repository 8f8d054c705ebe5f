"""Power-splitting SWIPT solvers under a logistic energy-harvesting model."""
