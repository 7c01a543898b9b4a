"""Supervised binary hashing from triplet labels.

Modules:
    codes: bit-packed hash codes and Hamming distance.
    loss: triplet likelihood, quantization penalty and gradients.
    encoder: linear and one-hidden-layer encoders.
    sampler: label stores and triplet sampling.
    trainer: minibatch SGD.
    index: Hamming-ranked retrieval.
    evaluation: average precision and MAP.
    datasets: feature files and the synthetic benchmark.
    experiment: one train / encode / evaluate cycle.
    cli: command-line front end.
"""

__version__ = "0.1.0"
