from .archive import load_arrays, save_arrays
from .bundle import (
    ANOMALOUS,
    NORMAL,
    BundleError,
    CorruptPayload,
    FeatureBundle,
    MagicMismatch,
    MalformedHeader,
    ShapeMismatch,
    TruncatedBlob,
    UnsupportedVersion,
    decode_bundle,
    encode_bundle,
    read_bundle,
    write_bundle,
)
from .manifest import DatasetManifest, NoiseProtocol, load_manifest
from .noise import inject_noise
from .ransac import remove_background_plane
from .resize import resize_bilinear
from .synth import SynthSpec, generate_synthetic_dataset
