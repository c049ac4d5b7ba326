"""Document vectors from per-document adaptation of recurrent language
models, plus TF-IDF / PV-DM baselines and a genre-classification harness."""

__version__ = "0.1.0"
