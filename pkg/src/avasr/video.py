"""Video pipeline: synchronize mouth-track clips to the acoustic frame rate,
normalize pixels, and extract per-step tubelet tokens.

Tubelet layout: at output step t the 8-frame window covers input frames
[t-3, t+4] (edge frames replicated at clip boundaries). Each 128x128 frame
splits into a 4x4 grid of 32x32 patches; token index is gy*4+gx in row-major
grid order. Each voxel flattens with (h, w, t, channel) fastest-to-slowest,
i.e. flat index = h + 32*w + 32*32*t + 32*32*8*c.

Raw clip container ("RGBV"): little-endian header
    magic 'RGBV' | u32 version=1 | u32 width | u32 height
    | u32 frame_count | u32 fps_num | u32 fps_den
followed by frame_count frames of height*width*3 RGB24 bytes, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DimensionError, InputError

FRAME_HW = 128
TUBELET_HW = 32
TUBELET_T = 8
GRID = FRAME_HW // TUBELET_HW          # 4 per axis
TOKENS_PER_STEP = GRID * GRID          # 16
TOKEN_DIM = TUBELET_HW * TUBELET_HW * TUBELET_T * 3  # 24576
ACOUSTIC_RATE = 100.0 / 3.0            # exact 30 ms period

_RGBV_MAGIC = b"RGBV"
_RGBV_HEADER = struct.Struct("<4sIIIIII")


@dataclass
class VideoClip:
    """Frames (T, 128, 128, 3); float pixels are expected in [-1, 1]."""
    frames: np.ndarray
    fps: float

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1:] != (FRAME_HW, FRAME_HW, 3):
            raise DimensionError(
                f"clip frames must be (T, {FRAME_HW}, {FRAME_HW}, 3), got {self.frames.shape}")
        if self.fps <= 0:
            raise InputError(f"fps must be positive, got {self.fps}")

    def __len__(self):
        return self.frames.shape[0]


def normalize_rgb(frames: np.ndarray, dtype=np.float64) -> np.ndarray:
    """uint8 pixels -> [-1, 1]: x/127.5 - 1."""
    return np.asarray(frames, dtype=dtype) / 127.5 - 1.0


def resample_nn(clip: VideoClip, target_rate: float) -> VideoClip:
    """Nearest-neighbor resampling in time. Output frame j is the input
    frame minimizing |i/fps - j/target_rate|, ties toward the earlier frame;
    output length round(T * target_rate / fps)."""
    if len(clip) == 0:
        raise InputError("cannot resample an empty clip")
    if target_rate <= 0:
        raise InputError(f"target rate must be positive, got {target_rate}")
    t_in = len(clip)
    t_out = int(np.floor(t_in * target_rate / clip.fps + 0.5))
    t_out = max(t_out, 1)
    pos = np.arange(t_out) * (clip.fps / target_rate)
    idx = np.ceil(pos - 0.5).astype(np.int64)  # round half down -> earlier frame
    idx = np.clip(idx, 0, t_in - 1)
    return VideoClip(clip.frames[idx], target_rate)


def extract_tubelets(clip: VideoClip) -> np.ndarray:
    """(T, 128, 128, 3) normalized clip -> (T, 16, 24576) tokens; output
    step count equals input step count (temporal stride 1)."""
    frames = clip.frames
    t_steps = frames.shape[0]
    if t_steps < 1:
        raise InputError("clip must contain at least one frame")
    window = np.arange(-(TUBELET_T // 2 - 1), TUBELET_T // 2 + 1)  # [-3, 4]
    idx = np.clip(np.arange(t_steps)[:, None] + window[None, :], 0, t_steps - 1)
    win = frames[idx]  # (T, 8, 128, 128, 3)
    g = win.reshape(t_steps, TUBELET_T, GRID, TUBELET_HW, GRID, TUBELET_HW, 3)
    # axes: (T, tw, gy, h, gx, w, c) -> (T, gy, gx, c, tw, w, h)
    tok = g.transpose(0, 2, 4, 6, 1, 5, 3)
    return np.ascontiguousarray(tok).reshape(t_steps, TOKENS_PER_STEP, TOKEN_DIM)


def write_rgbv(path, frames: np.ndarray, fps) -> None:
    """Write uint8 (T, H, W, 3) frames with fps given as float or
    (num, den)."""
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise InputError(f"expected (T, H, W, 3) uint8 frames, got {frames.shape}")
    if isinstance(fps, tuple):
        num, den = fps
    else:
        frac = Fraction(fps).limit_denominator(1000)
        num, den = frac.numerator, frac.denominator
    t, h, w, _ = frames.shape
    with open(path, "wb") as f:
        f.write(_RGBV_HEADER.pack(_RGBV_MAGIC, 1, w, h, t, num, den))
        f.write(frames.tobytes())


def read_rgbv(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as f:
        header = f.read(_RGBV_HEADER.size)
        if len(header) < _RGBV_HEADER.size:
            raise InputError("truncated RGBV header")
        magic, version, w, h, t, num, den = _RGBV_HEADER.unpack(header)
        if magic != _RGBV_MAGIC:
            raise InputError(f"bad magic {magic!r}, expected {_RGBV_MAGIC!r}")
        if version != 1:
            raise InputError(f"unsupported RGBV version {version}")
        raw = f.read(t * h * w * 3)
    if len(raw) != t * h * w * 3:
        raise InputError("truncated RGBV frame data")
    frames = np.frombuffer(raw, dtype=np.uint8).reshape(t, h, w, 3).copy()
    return frames, num / den
