"""Bridge from pretrained CNNs to the .fmap feature-map file format."""

__version__ = "0.1.0"
