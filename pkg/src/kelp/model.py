"""Model bundle (encoder + injection + decoder parameters) and checkpoints.

Checkpoint format: magic ``DKPT``, uint32 format version, uint32 header
length, JSON header (encoder config, extras, block manifest), then the raw
float64 little-endian parameter blocks in manifest order. Loading validates
every block's shape against the header before copying.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np
import torch
from torch import Tensor

from .decoder import DecoderParams
from .encoder import EncoderConfig, TinyEncoder
from .errors import DataError
from .injection import InjectionParams

MAGIC = b"DKPT"
FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    config: EncoderConfig
    encoder: TinyEncoder
    injection: InjectionParams
    decoder: DecoderParams

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """Every parameter block in checkpoint manifest order."""
        for prefix, module in (
            ("encoder", self.encoder),
            ("injection", self.injection),
            ("decoder", self.decoder),
        ):
            for name, p in module.named_parameters():
                yield f"{prefix}.{name}", p

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def gradients(self, loss: Tensor) -> dict[str, Tensor]:
        from .encoder import backward

        return backward(self.named_parameters(), loss)


def init_model(
    config: EncoderConfig,
    seed: int = 0,
    delta_d: float = 1.0,
    delta_d_trainable: bool = False,
) -> ModelBundle:
    generator = torch.Generator().manual_seed(seed)
    encoder = TinyEncoder(config, generator)
    injection = InjectionParams(config.d_model, generator)
    decoder = DecoderParams(config.d_model, generator, delta_d, delta_d_trainable)
    return ModelBundle(config=config, encoder=encoder, injection=injection, decoder=decoder)


def save_checkpoint(path: str, bundle: ModelBundle) -> None:
    blocks = list(bundle.named_parameters())
    header = {
        "format_version": FORMAT_VERSION,
        "encoder_config": asdict(bundle.config),
        "extras": {"delta_d_trainable": bool(bundle.decoder.delta_d.requires_grad)},
        "manifest": [[name, list(p.shape)] for name, p in blocks],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for _, p in blocks:
            f.write(p.detach().numpy().astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path: str) -> ModelBundle:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format version {version}")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
    config = EncoderConfig(**header["encoder_config"])
    extras = header.get("extras", {})
    bundle = init_model(
        config, seed=0, delta_d_trainable=bool(extras.get("delta_d_trainable", False))
    )
    params = dict(bundle.named_parameters())
    offset = 12 + header_len
    with torch.no_grad():
        for name, shape in header["manifest"]:
            if name not in params:
                raise DataError(f"{path}: unknown parameter block {name!r} in manifest")
            p = params[name]
            if list(p.shape) != list(shape):
                raise DataError(
                    f"{path}: shape mismatch for {name}: header {shape}, model {list(p.shape)}"
                )
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            if offset + nbytes > len(raw):
                raise DataError(f"{path}: truncated checkpoint at block {name!r}")
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
            p.copy_(torch.from_numpy(arr.copy()))
            offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after parameter blocks")
    return bundle
