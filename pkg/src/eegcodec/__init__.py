"""Neural compression of EEG and intracranial EEG with residual vector quantization."""

__version__ = "0.1.0"

from .codec import Codec, CodecConfig, build_codec, compression_ratio
from .quantizer import QuantizerConfig, ResidualVectorQuantizer
from .signal_io import Modality, Recording, load_recording, save_recording
from .bitstream import ContainerHeader, deserialize, serialize
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .pipeline import LoadedModel, compress_recording, decompress_bytes, reconstruct_recording
from .trainer import TrainConfig, fit
from .metrics import prd, prd_spec, psnr_db, rmse, snr_db

__all__ = [
    "Checkpoint", "Codec", "CodecConfig", "ContainerHeader", "LoadedModel", "Modality",
    "QuantizerConfig", "Recording", "ResidualVectorQuantizer", "TrainConfig", "build_codec",
    "compress_recording", "compression_ratio", "decompress_bytes", "deserialize", "fit",
    "load_checkpoint", "load_recording", "prd", "prd_spec", "psnr_db", "reconstruct_recording",
    "rmse", "save_checkpoint", "save_recording", "serialize", "snr_db",
]
