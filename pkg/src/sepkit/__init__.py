"""sepkit: desk-scale two-talker speech separation toolkit.

Core pieces: STFT analysis/synthesis, synthetic two-source corpora,
phase-sensitive masking, deep-clustering embeddings, permutation-invariant
mask training with a discriminative regularizer, K-means baseline inference,
and SDR/SIR/SAR evaluation.
"""

__version__ = "0.1.0"
