"""Detect AI-generated images from frozen vision-encoder embeddings.

The heavy lifting lives in the compiled ``_core`` module; this package
re-exports it and adds a few conveniences.
"""

from pathlib import Path

from ._core import (
    EMBEDDING_DIM,
    ClipdetectError,
    ConfigError,
    ContractError,
    CorruptionError,
    DecodeError,
    DimensionError,
    Encoder,
    FormatError,
    Head,
    NumericalError,
    Record,
    TrainConfig,
    TrainedHead,
    TransportError,
    ValidationError,
    dataset_digest,
    decode_cache,
    encode_cache,
    evaluate,
    few_shot_split,
    metrics,
    parse_verdict,
    preprocess,
    read_cache,
    render_prompt,
    run_cli,
    run_few_shot,
    sha256_hex,
    train,
    write_cache,
)

__all__ = [name for name in dir() if not name.startswith("_") and name != "Path"]


def embed_file(encoder, path, normalize=True):
    """Embeds one image file with a loaded Encoder."""
    return encoder.embed(Path(path).read_bytes(), normalize)
