"""dsel: labeled-data selection and weighted category discovery on frozen embeddings."""

__version__ = "0.1.0"
