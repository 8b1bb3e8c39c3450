"""Chest X-ray enhancement, hybrid classifier and evaluation metrics."""

from ._nasvit import (
    CLASS_NAMES,
    ConfigError,
    ContractError,
    Error,
    FormatError,
    IndexError,
    InputError,
    IoError,
    Model,
    NumericError,
    RunConfig,
    ShapeError,
    bandpass_plane,
    bilateral_filter,
    binary_close,
    clahe,
    confusion,
    confusion_svg,
    dwt2_haar,
    fourier_bandpass,
    idwt2_haar,
    metrics,
    metrics_csv,
    mixprocess,
    morphological_enhance,
    normalize,
    otsu_mask,
    otsu_threshold_bin,
    read_image,
    resize_bilinear,
    wavelet_enhance,
    write_png,
)

__all__ = [name for name in dir() if not name.startswith("_")]
