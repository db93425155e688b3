"""dmlkit: cross-fitted orthogonal-moment estimation.

Estimation of treatment-effect and partially linear regression parameters
from linear-in-parameter moment conditions, with cross-fitted nuisance
learners, sandwich inference, repetition aggregation, event-study
summaries, diagnostics, and a calibrated Monte-Carlo harness.
"""

__version__ = "0.1.0"
