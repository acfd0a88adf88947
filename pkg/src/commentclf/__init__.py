"""Binary code-comment sentence classifiers built from contrastively fine-tuned sentence embeddings."""

__version__ = "0.1.0"
