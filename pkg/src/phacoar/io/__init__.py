"""Readers and writers for session files, plus flat configuration."""
from .config import KEYS, Config
from .formats import (FrameEntry, Manifest, ResultsWriter, atomic_write, read_features, read_gray,
                      read_mask, read_results, write_features, write_gray, write_json, write_mask)

__all__ = ["Config", "FrameEntry", "KEYS", "Manifest", "ResultsWriter", "atomic_write",
           "read_features", "read_gray", "read_mask", "read_results", "write_features",
           "write_gray", "write_json", "write_mask"]
