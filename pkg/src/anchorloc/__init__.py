"""Sequential video-frame camera localization against a frozen reference
SfM model, with anchor-seeded registration, recursive reconstruction,
baseline methods, and a synthetic evaluation harness."""

__version__ = "0.1.0"
