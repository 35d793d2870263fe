#!/usr/bin/env python3.10

from pathlib import Path
from typing import Union

import cv2
import numpy as np
from PIL import Image
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def crop_image_box(image: np.ndarray, x_start: int, y_start: int, side: int) -> np.ndarray:
    """
    Crops a square ``side`` x ``side`` window whose top-left corner is (x_start, y_start).

    The window must lie fully inside the image; callers clip their sampled boxes first.

    Parameters:
    - image: H x W x C array.
    - x_start, y_start: top-left corner (column, row).
    - side: square side length in pixels.

    Returns:
    - The cropped view copied into a contiguous array.
    """
    height, width = image.shape[:2]
    if side < 1 or x_start < 0 or y_start < 0 or x_start + side > width or y_start + side > height:
        raise ValueError(
            f"Crop box (x={x_start}, y={y_start}, side={side}) is outside a {width}x{height} image"
        )
    return np.ascontiguousarray(image[y_start:y_start + side, x_start:x_start + side])
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Resize a square H x W x C float image to ``size`` x ``size`` with bilinear interpolation."""
    if image.shape[0] == size and image.shape[1] == size:
        return image.copy()
    resized = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[:, :, None]
    return resized
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def write_ppm(image: np.ndarray, file_path: Union[str, Path]) -> None:
    """Write an H x W x 3 image with values in [0, 1] as binary PPM (P6)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM export expects H x W x 3, got {image.shape}")
    Path(file_path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(file_path, format="PPM")
#//////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////////
def read_ppm(file_path: Union[str, Path]) -> np.ndarray:
    """Read a PPM file into an H x W x 3 float32 array with values in [0, 1]."""
    with Image.open(file_path) as handle:
        pixels = np.asarray(handle.convert("RGB"), dtype=np.float32)
    return pixels / np.float32(255.0)
