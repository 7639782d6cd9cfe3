"""Image I/O, luma conversion, Otsu thresholding and quality metrics."""

from shadoc.imaging.image import Image, load_image, luma, quantize, save_image, to_grayscale
from shadoc.imaging.metrics import MetricReport, evaluate, psnr, psnr_from_rmse, rmse, ssim
from shadoc.imaging.otsu import OtsuResult, binarize, otsu_prior, otsu_threshold

__all__ = [
    "Image",
    "MetricReport",
    "OtsuResult",
    "binarize",
    "evaluate",
    "load_image",
    "luma",
    "otsu_prior",
    "otsu_threshold",
    "psnr",
    "psnr_from_rmse",
    "quantize",
    "rmse",
    "save_image",
    "ssim",
    "to_grayscale",
]
