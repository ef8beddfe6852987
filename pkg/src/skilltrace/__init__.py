"""Knowledge-tracing workbench.

Fits four student models (BKT, PFA, DKT, DKVMN) on first-attempt
interaction logs, converts their per-attempt correctness predictions into
per-skill knowledge estimates, and compares estimators against external
posttest scores with dependent-correlation tests under FDR control.
"""

__version__ = "0.1.0"

ESTIMATOR_NAMES = ("BKT", "mean-BKT", "PFA", "mean-PFA", "mean-DKT", "mean-DKVMN")
