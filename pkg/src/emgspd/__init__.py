"""Silent-speech EMG decoding on SPD matrix frames.

Pipeline: raw recordings -> :mod:`~emgspd.preprocess` -> :mod:`~emgspd.features`
(SPD or spectrogram frames) -> :mod:`~emgspd.model` (BiGRU + CTC) ->
:mod:`~emgspd.ctc` / :mod:`~emgspd.hlg` decoding -> :mod:`~emgspd.metrics`.
"""

__version__ = "0.1.0"

from .exceptions import DataError, EmgSpdError, FormatError, ParameterError  # noqa: E402
from .features import SpdFeaturizer, SpectrogramFeaturizer  # noqa: E402
from .io import PhonemeInventory  # noqa: E402
from .model import CTCAcousticModel  # noqa: E402
from .preprocess import EmgPreprocessor  # noqa: E402

__all__ = [
    "CTCAcousticModel",
    "DataError",
    "EmgPreprocessor",
    "EmgSpdError",
    "FormatError",
    "ParameterError",
    "PhonemeInventory",
    "SpdFeaturizer",
    "SpectrogramFeaturizer",
]
