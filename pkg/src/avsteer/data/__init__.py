"""Clip curation, synthetic planted-cue data, and augmentation."""
