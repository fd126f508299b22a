"""Binary code summarization: listings in, natural-language summaries out."""

__version__ = "0.1.0"
