"""Graph convolutional classification of scalp EEG windows.

Pipeline: bipolar montage and filtering (:mod:`signal_core`), band-power
features and coherence (:mod:`spectral`), per-window graphs
(:mod:`graph_builder`), the GCNN itself (:mod:`neural`), subject-disjoint
training (:mod:`training`) and subject-level evaluation (:mod:`evaluation`).
"""

__version__ = "0.1.0"
