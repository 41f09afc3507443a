"""Training, cross-validation, benchmarks, saliency export and the command line."""
