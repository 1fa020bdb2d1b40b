"""Anemia-control dosing direction pipeline.

Learns physicians' UP/STAY/DOWN dosing directions for erythropoiesis-stimulating
agents (ESA) and iron supplements (IS) from per-occasion dialysis blood panels,
with delayed-decision rectification, class-weighted training, two-step
thresholded classification, and validation harnesses exercised on a synthetic
cohort generator.
"""

__version__ = "0.1.0"
