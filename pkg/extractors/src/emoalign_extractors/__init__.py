"""Real-data adapters: audio features and label embeddings as interchange files.

Everything here writes the EMBMAT01 and JSON-Lines formats the emoalign
library reads; nothing imports that library. Pretrained encoders live
behind backend objects so offline environments can run the full pipeline
against deterministic stubs with the real models' dimensions.
"""

from .audio import load_audio, load_wav, resample, split_segments
from .backends import (
    DEFAULT_MUSIC_MODEL,
    DEFAULT_SENTENCE_MODEL,
    PretrainedMusicEncoder,
    PretrainedSentenceEncoder,
    StubMusicEncoder,
    StubSentenceEncoder,
    pretrained_models_available,
)
from .extract import (
    FEATURE_LAYERS,
    ExtractionJob,
    extract_label_embeddings,
    extract_music_features,
    segment_features,
)
from .formats import ExtractionError, write_embedding_file, write_manifest
from .ratings import (
    build_label_lists,
    labels_mean_threshold,
    labels_top_k,
    read_ratings_csv,
    write_label_fragment,
)

__version__ = "0.1.0"
