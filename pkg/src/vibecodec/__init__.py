"""Band-power analysis, perceptual modelling and sparse coding of stationary vibrations."""

__version__ = "0.1.0"

from .signal import Rng, Signal, SignalError, load_signal, save_signal, resample, gaussian_noise, pearson_r, windows
from .filterbank import BandPowers, FilterBank, band_powers, design_bank, filter_subbands, intensity_band_power
from .intensity import IntensityModel, equalization_gain, fit_intensity, non_stationarity, predict_intensity
from .basis import PcaScores, SpectralBasis, fit_basis, project, reconstruct
from .dissimilarity import (
    DissimModel,
    RatingsTable,
    component_ablation,
    evaluate_split,
    fit_lasso,
    local_distances,
    predict_dissimilarity,
)
from .space import DistanceMatrix, Embedding, classical_mds, component_arrow, procrustes
from .codec import (
    CodecStream,
    EncodedVibration,
    SynthesisConfig,
    compression_stats,
    decode,
    encode,
    impose_band_powers,
    read_vbc,
    write_vbc,
)
