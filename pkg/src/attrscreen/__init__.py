"""Screen tabular datasets for attributes likely to induce shortcut bias."""

__version__ = "0.1.0"
