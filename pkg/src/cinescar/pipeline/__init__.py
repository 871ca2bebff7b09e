"""Configuration, file formats, augmentation, checkpoints, experiment harness and CLI."""
