"""Contrastive image-genetics pretraining with attribution and embedding GWAS."""

__version__ = "0.1.0"
