"""Persistence-of-vision memory and the agent-facing observation pipeline."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .envkit import interp

STITCH, STACK, OFF = "stitch", "stack", "off"
PVM_KINDS = (STITCH, STACK, OFF)


class PvmError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    image: np.ndarray
    location: tuple[int, int]
    size: tuple[int, int]


class PvmBuffer:
    """The last ``capacity`` partial observations, oldest first."""

    def __init__(self, capacity=3, frame_shape=(84, 84)):
        if capacity < 1:
            raise PvmError("PVM capacity must be >= 1")
        self.capacity = capacity
        self.frame_shape = tuple(frame_shape)
        self.records: deque[Record] = deque(maxlen=capacity)
        self.peripheral = None

    def __len__(self):
        return len(self.records)

    def reset(self):
        self.records.clear()
        self.peripheral = None
        return self

    def push(self, image, location=(0, 0), size=None):
        image = np.asarray(image)
        size = tuple(image.shape) if size is None else tuple(size)
        if tuple(image.shape) != size:
            raise PvmError(f"observation shape {image.shape} does not match size {size}")
        x, y = location
        H, W = self.frame_shape
        if x < 0 or y < 0 or x + size[0] > H or y + size[1] > W:
            raise PvmError(f"record at {location} of size {size} leaves the {H}x{W} frame")
        self.records.append(Record(image.copy(), (int(x), int(y)), size))

    def canvas(self):
        """Stitched full-frame image: newer records overwrite older ones.

        If a peripheral image is set it is upsampled and painted first.
        Pixels never covered stay 0.
        """
        if self.peripheral is not None:
            out = interp(self.peripheral, self.frame_shape).astype(np.float32)
        else:
            out = np.zeros(self.frame_shape, dtype=np.float32)
        for rec in self.records:
            x, y = rec.location
            h, w = rec.size
            out[x:x + h, y:y + w] = rec.image
        return out

    def stacked(self):
        """Channel stack of the stored images, oldest first, zero padded to ``capacity``."""
        if not self.records:
            raise PvmError("stacking needs at least one record to fix the resolution")
        shape = self.records[-1].image.shape
        out = np.zeros((self.capacity,) + shape, dtype=np.float32)
        offset = self.capacity - len(self.records)
        for i, rec in enumerate(self.records):
            out[offset + i] = rec.image
        return out


def pvm_push_stitch(buf, obs, loc, size=None):
    """Append a foveal crop at ``loc`` and return the rebuilt canvas."""
    buf.push(obs, loc, size)
    return buf.canvas()


def pvm_push_stack(buf, obs):
    if buf.records and buf.records[-1].image.shape != np.shape(obs):
        raise PvmError(f"resolution mismatch: {np.shape(obs)} vs {buf.records[-1].image.shape}")
    buf.push(obs, (0, 0))
    return buf.stacked()


def pvm_reset(buf):
    return buf.reset()


class ObservationPipeline:
    """Turns observation packets into the network input.

    ``stitch``: canvas of the last ``capacity`` crops (native scale, in frame
    coordinates), resized to ``input_size``, then the last ``frame_stack``
    canvases stacked.  ``off``: the same with a single-record window.
    ``stack``: the last ``capacity`` foveal images resized to ``input_size``,
    used directly as channels.

    Outputs are uint8 arrays of shape ``(channels, input_size, input_size)``.
    """

    def __init__(self, kind=STITCH, capacity=3, frame_shape=(84, 84), input_size=84,
                 frame_stack=4, peripheral=False):
        if kind not in PVM_KINDS:
            raise PvmError(f"unknown PVM kind {kind!r}")
        self.kind = kind
        self.input_size = input_size
        self.frame_stack = frame_stack
        self.peripheral = peripheral
        self.buffer = PvmBuffer(1 if kind == OFF else capacity, frame_shape)
        self.frames: deque[np.ndarray] = deque(maxlen=self.channels)

    @property
    def channels(self):
        return self.buffer.capacity if self.kind == STACK else self.frame_stack

    def reset(self, packet):
        self.buffer.reset()
        self.frames.clear()
        return self.observe(packet)

    def observe(self, packet):
        res = (self.input_size, self.input_size)
        if self.kind == STACK:
            self.buffer.push(packet.foveal, (0, 0))
            frame = interp(self.buffer.records[-1].image, res)
            self.frames.append(_to_uint8(frame))
        else:
            if self.peripheral:
                self.buffer.peripheral = packet.peripheral
            self.buffer.push(packet.crop, packet.fovea_location, packet.fovea_size)
            self.frames.append(_to_uint8(interp(self.buffer.canvas(), res)))
        while len(self.frames) < self.channels:
            self.frames.appendleft(np.zeros(res, dtype=np.uint8))
        return np.stack(self.frames)


def _to_uint8(img):
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
