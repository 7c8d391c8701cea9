"""1-D residual encoder with a linear projection head.

Layout: stem (conv -> norm -> ReLU [-> max-pool]) followed by residual stages
of basic blocks, global average pooling over time (the feature boundary used
for linear evaluation), then a single affine projection head.  Every stage
after the first halves the time axis.

Presets:

``resnet18-1d-512/128``
    stem conv k=7 s=2 width 64 + max-pool k=3 s=2; four stages of widths
    64/128/256/512 with two blocks each; 512-d features, 128-d projection.
    Minimum input length 32 (five halvings).
``tiny-1d-64/32``
    stem conv k=7 s=2 width 32 + max-pool k=3 s=2; two stages of widths
    32/64 with one block each; 64-d features, 32-d projection.  Minimum
    input length 8.

Any input length at or above the minimum is accepted; the pooled feature
size does not depend on it.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DegenerateInputWarning, FormatError, InputError, StateError

CHECKPOINT_FORMAT = "polywin-checkpoint"
CHECKPOINT_VERSION = 1
BN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 12
    stem_width: int = 64
    stage_widths: tuple[int, ...] = (64, 128, 256, 512)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2, 2)
    embed_dim: int = 512
    proj_dim: int = 128
    preset_name: str | None = None
    stem_kernel: int = 7
    stem_stride: int = 2
    stem_pool: bool = True
    block_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        widths = (self.in_channels, self.stem_width, self.embed_dim, self.proj_dim, *self.stage_widths)
        if any(w < 1 for w in widths):
            raise InputError("all widths must be >= 1")
        if len(self.stage_widths) != len(self.blocks_per_stage):
            raise InputError("stage_widths and blocks_per_stage must have equal length")
        if any(b < 1 for b in self.blocks_per_stage):
            raise InputError("every stage needs at least one block")
        final = self.stage_widths[-1] if self.stage_widths else self.stem_width
        if self.embed_dim != final:
            raise InputError(f"embed_dim {self.embed_dim} must equal the final stage width {final}")

    @property
    def min_length(self) -> int:
        halvings = int(math.log2(self.stem_stride)) if self.stem_stride > 1 else 0
        halvings += int(self.stem_pool) + max(0, len(self.stage_widths) - 1)
        return 2**halvings

    def with_channels(self, c: int) -> "EncoderConfig":
        return EncoderConfig(**{**asdict(self), "in_channels": c})


PRESETS: dict[str, EncoderConfig] = {
    "resnet18-1d-512/128": EncoderConfig(
        in_channels=12,
        stem_width=64,
        stage_widths=(64, 128, 256, 512),
        blocks_per_stage=(2, 2, 2, 2),
        embed_dim=512,
        proj_dim=128,
        preset_name="resnet18-1d-512/128",
    ),
    "tiny-1d-64/32": EncoderConfig(
        in_channels=4,
        stem_width=32,
        stage_widths=(32, 64),
        blocks_per_stage=(1, 1),
        embed_dim=64,
        proj_dim=32,
        preset_name="tiny-1d-64/32",
    ),
}


def preset(name: str, in_channels: int | None = None) -> EncoderConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise InputError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
    return cfg if in_channels is None else cfg.with_channels(in_channels)


def _fan_in_uniform_(t: torch.Tensor, fan_in: int, gen: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=gen, dtype=t.dtype) * (2 * bound) - bound)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, kernel: int):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(cin, cout, kernel, stride=stride, padding=pad, bias=False)
        self.bn1 = nn.BatchNorm1d(cout, eps=BN_EPS)
        self.conv2 = nn.Conv1d(cout, cout, kernel, stride=1, padding=pad, bias=False)
        self.bn2 = nn.BatchNorm1d(cout, eps=BN_EPS)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv1d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm1d(cout, eps=BN_EPS)
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


class Encoder(nn.Module):
    """Feature extractor plus projection head.

    ``embed`` runs the full path to unit-norm projections and keeps the graph
    so that ``backward`` can consume the loss gradient with respect to those
    projections.
    """

    def __init__(self, cfg: EncoderConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        stem = [
            nn.Conv1d(cfg.in_channels, cfg.stem_width, cfg.stem_kernel, stride=cfg.stem_stride,
                      padding=cfg.stem_kernel // 2, bias=False),
            nn.BatchNorm1d(cfg.stem_width, eps=BN_EPS),
            nn.ReLU(),
        ]
        if cfg.stem_pool:
            stem.append(nn.MaxPool1d(3, stride=2, padding=1))
        self.stem = nn.Sequential(*stem)
        blocks = []
        cin = cfg.stem_width
        for i, (w, n) in enumerate(zip(cfg.stage_widths, cfg.blocks_per_stage)):
            for j in range(n):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(BasicBlock(cin, w, stride, cfg.block_kernel))
                cin = w
        self.stages = nn.Sequential(*blocks)
        self.head = nn.Linear(cfg.embed_dim, cfg.proj_dim)
        self._cache: tuple[torch.Tensor, torch.Tensor] | None = None
        self.to(dtype)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        for m in self.modules():
            if isinstance(m, nn.Conv1d):
                _fan_in_uniform_(m.weight, m.in_channels * m.kernel_size[0], gen)
            elif isinstance(m, nn.BatchNorm1d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
                m.reset_running_stats()
            elif isinstance(m, nn.Linear):
                _fan_in_uniform_(m.weight, m.in_features, gen)
                _fan_in_uniform_(m.bias, m.in_features, gen)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, L) -> (B, embed_dim), pooled over time."""
        if x.ndim != 3 or x.shape[1] != self.cfg.in_channels:
            raise InputError(f"expected input (batch, {self.cfg.in_channels}, length), got {tuple(x.shape)}")
        if x.shape[2] < self.cfg.min_length:
            raise InputError(f"input length {x.shape[2]} below the minimum {self.cfg.min_length} for this encoder")
        h = self.stages(self.stem(x))
        return h.mean(dim=2)

    def project(self, h: torch.Tensor) -> torch.Tensor:
        if h.ndim != 2 or h.shape[1] != self.cfg.embed_dim:
            raise InputError(f"expected features (batch, {self.cfg.embed_dim}), got {tuple(h.shape)}")
        return self.head(h)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.features(x)
        return h, self.project(h)

    def embed(self, x) -> np.ndarray:
        """Forward to L2-normalized projections, caching the graph for ``backward``."""
        x = torch.as_tensor(np.asarray(x), dtype=self.dtype).detach().requires_grad_(True)
        z = normalize_rows(self.project(self.features(x)))
        self._cache = (x, z)
        return z.detach().numpy().copy()

    def backward(self, grad_z) -> dict[str, torch.Tensor]:
        """Backpropagate ``dL/dz`` from the last ``embed`` call.

        Gradients accumulate into ``param.grad`` (cleared first) and are
        returned by name; the input gradient is stored under ``"input"``.
        """
        if self._cache is None:
            raise StateError("backward called without a preceding embed (or called twice)")
        x, z = self._cache
        self._cache = None
        g = torch.as_tensor(np.asarray(grad_z), dtype=z.dtype)
        if g.shape != z.shape:
            raise InputError(f"upstream gradient shape {tuple(g.shape)} does not match embeddings {tuple(z.shape)}")
        self.zero_grad(set_to_none=False)
        z.backward(g)
        grads = {name: p.grad for name, p in self.named_parameters()}
        grads["input"] = x.grad
        return grads

    def no_decay_names(self) -> set[str]:
        return {n for n, p in self.named_parameters() if p.ndim == 1}

    def numpy_params(self) -> dict[str, np.ndarray]:
        """Writable numpy views sharing storage with the parameters."""
        return {n: p.detach().numpy() for n, p in self.named_parameters()}

    def numpy_grads(self) -> dict[str, np.ndarray]:
        return {n: p.grad.detach().numpy() for n, p in self.named_parameters()}


def normalize_rows(z: torch.Tensor) -> torch.Tensor:
    norms = z.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        warnings.warn("zero-norm embedding rows left as zero", DegenerateInputWarning, stacklevel=2)
    return z / torch.where(norms == 0, torch.ones_like(norms), norms)


def l2_normalize(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    zero = norms[:, 0] == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-norm rows left as zero", DegenerateInputWarning, stacklevel=2)
    return rows / np.where(norms == 0, 1.0, norms)


def forward_features(encoder: Encoder, x, batch_size: int = 256) -> np.ndarray:
    """Frozen-encoder features (eval-mode normalization, no graph)."""
    x = np.asarray(x)
    was_training = encoder.training
    encoder.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            xb = torch.as_tensor(x[i : i + batch_size], dtype=encoder.dtype)
            out.append(encoder.features(xb).numpy())
    encoder.train(was_training)
    if not out:
        return np.zeros((0, encoder.cfg.embed_dim), dtype=np.float32)
    return np.concatenate(out)


def project(encoder: Encoder, features) -> np.ndarray:
    with torch.no_grad():
        return encoder.project(torch.as_tensor(np.asarray(features), dtype=encoder.dtype)).numpy()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
# A checkpoint is an uncompressed .npz archive: one array per state_dict
# entry (parameters and normalization running statistics) plus a
# "__meta__" entry holding UTF-8 JSON {format, version, config, extra}.


def save_checkpoint(encoder: Encoder, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(encoder.cfg),
        "dtype": str(encoder.dtype).replace("torch.", ""),
        "extra": extra or {},
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in encoder.state_dict().items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> tuple[Encoder, dict]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a readable checkpoint ({exc})") from exc
    if "__meta__" not in arrays:
        raise FormatError(f"{path}: checkpoint metadata missing")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    if meta.get("format") != CHECKPOINT_FORMAT or int(meta.get("version", 0)) > CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format {meta.get('format')!r} v{meta.get('version')}")
    cfg = EncoderConfig(**meta["config"])
    dtype = getattr(torch, meta.get("dtype", "float32"))
    enc = Encoder(cfg, dtype=dtype)
    state = {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}
    try:
        enc.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise FormatError(f"{path}: tensors do not match the stored config ({exc})") from exc
    return enc, meta
