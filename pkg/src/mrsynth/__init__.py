"""mrsynth: physics-driven synthetic data engine for magnetic resonance.

Evolves magnetization under the Bloch equation, evaluates closed-form MR
signal models, procedurally generates parametric phantoms and imperfection
fields, degrades and undersamples signals, exports deterministic paired
training datasets, and closes the loop with dictionary matching and a
minimal trainable regressor.
"""

from . import analytic, bloch, datasets, degrade, errors, phantoms, quantify, sequences

__version__ = "0.1.0"

__all__ = [
    "analytic",
    "bloch",
    "datasets",
    "degrade",
    "errors",
    "phantoms",
    "quantify",
    "sequences",
    "__version__",
]
