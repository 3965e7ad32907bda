"""Audio-to-store extraction for the merit toolkit."""

from .encoder import DeterministicEncoder, PretrainedMusicEncoder, make_encoder
from .extract import (DEFAULT_LAYERS, ExtractionJob, center_crop, embed_file,
                      extract, read_wav, resample, write_store_file)

__version__ = "0.1.0"
