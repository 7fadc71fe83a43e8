"""Distribution-free uncertainty quantification for streams of quality scores.

Conformal and adaptive-conformal intervals around a mean-reversion forecaster,
Mondrian (group-conditional) calibration, compositional pipeline bounds,
conformal abstention for pairwise rankings with Benjamini-Hochberg control,
and a seeded simulator to exercise all of it.
"""

from pulsecal.core import Interval, ScoreSeries

__version__ = "0.1.0"

__all__ = ["Interval", "ScoreSeries", "__version__"]
