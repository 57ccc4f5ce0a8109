"""Variational tile codec: compresses each a x a x 3 entity tile to an
l x l x c latent and reconstructs it.

The encoder patchifies with a single stride-f convolution, so any f that
divides a gives exactly l = a / f. API tiles are channel-last numpy arrays;
latents are flattened float32 rows so a graph's entities stack into the
N x (l*l*c) matrices consumed by the graph backbone.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class CodecConfig:
    a: int = 64
    f: int = 2
    c: int = 4
    lam: float = 1e-4
    hidden: int = 32

    def __post_init__(self):
        if self.a < 1 or self.f < 1 or self.a % self.f != 0:
            raise ValueError("invalid config: f must divide a")
        if self.c < 1:
            raise ValueError("invalid config: need at least one latent channel")
        if self.lam < 0:
            raise ValueError("invalid config: KL weight must be >= 0")

    @property
    def l(self) -> int:
        return self.a // self.f

    @property
    def latent_dim(self) -> int:
        return self.l * self.l * self.c


@dataclass
class LatentEntity:
    z: np.ndarray  # (l, l, c) float32
    mu: np.ndarray
    logvar: np.ndarray


@dataclass
class LatentGraph:
    vertex_latents: np.ndarray  # (N_V, l*l*c) float32
    edge_latents: np.ndarray  # (N_E, l*l*c) float32
    edge_index: np.ndarray  # (N_E, 2) int64
    degrees: np.ndarray  # (N_V,) int64
    l: int
    c: int

    @property
    def width(self) -> int:
        return self.l * self.l * self.c


class TileVAE(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        h = config.hidden
        self.enc = nn.Sequential(
            nn.Conv2d(3, h, kernel_size=config.f, stride=config.f),
            nn.GELU(),
            nn.Conv2d(h, h, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv2d(h, 2 * config.c, kernel_size=1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(config.c, h, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv2d(h, h, kernel_size=3, padding=1),
            nn.GELU(),
            nn.ConvTranspose2d(h, 3, kernel_size=config.f, stride=config.f),
            nn.Sigmoid(),
        )

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """x: (B, 3, a, a) in [0,1] -> (mu, logvar), each (B, c, l, l)."""
        out = self.enc(x)
        return out.chunk(2, dim=1)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.dec(z)


def tiles_to_tensor(tiles: np.ndarray) -> torch.Tensor:
    """(N, a, a, 3) uint8 or float in [0,1] -> (N, 3, a, a) float32."""
    arr = np.asarray(tiles)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.astype(np.float32))).permute(
        0, 3, 1, 2
    )


def _check_tile(tile: np.ndarray, a: int) -> None:
    if tile.shape != (a, a, 3):
        raise ValueError(f"shape error: expected ({a}, {a}, 3), got {tile.shape}")


def encode_entity(
    codec: TileVAE,
    tile: np.ndarray,
    stochastic: bool = False,
    rng: np.random.Generator | None = None,
) -> LatentEntity:
    """Posterior parameters for one tile; z is the mean unless stochastic."""
    a = codec.config.a
    _check_tile(np.asarray(tile), a)
    x = tiles_to_tensor(np.asarray(tile)[None])
    with torch.no_grad():
        mu, logvar = codec.encode(x)
    mu_np = mu[0].permute(1, 2, 0).numpy().astype(np.float32)
    logvar_np = logvar[0].permute(1, 2, 0).numpy().astype(np.float32)
    if stochastic:
        if rng is None:
            raise ValueError("invalid parameter: stochastic path needs an rng")
        eps = rng.standard_normal(mu_np.shape).astype(np.float32)
        z = mu_np + np.exp(0.5 * logvar_np) * eps
    else:
        z = mu_np.copy()
    return LatentEntity(z=z, mu=mu_np, logvar=logvar_np)


def decode_latent(codec: TileVAE, z: np.ndarray) -> np.ndarray:
    """(l, l, c) latent -> (a, a, 3) reconstruction in [0,1]."""
    cfg = codec.config
    z = np.asarray(z, dtype=np.float32)
    if z.shape != (cfg.l, cfg.l, cfg.c):
        raise ValueError(
            f"shape error: expected ({cfg.l}, {cfg.l}, {cfg.c}), got {z.shape}"
        )
    zt = torch.from_numpy(z).permute(2, 0, 1)[None]
    with torch.no_grad():
        x = codec.decode(zt)
    return x[0].permute(1, 2, 0).numpy().astype(np.float32)


def vae_loss(x, x_hat, mu, logvar, lam: float):
    """Total, reconstruction, and KL components.

    L_rec is the mean squared error over all pixels. D_KL sums over each
    entity's latent and averages over entities (the leading axis when a
    batch dimension is present). Accepts numpy arrays (returns floats) or
    torch tensors (differentiable).
    """
    numpy_in = isinstance(x, np.ndarray)
    if numpy_in:
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
        x_hat = torch.as_tensor(np.asarray(x_hat, dtype=np.float64))
        mu = torch.as_tensor(np.asarray(mu, dtype=np.float64))
        logvar = torch.as_tensor(np.asarray(logvar, dtype=np.float64))
    for t in (x, x_hat, mu, logvar):
        if not torch.isfinite(t).all():
            raise ValueError("numeric error: non-finite input to vae_loss")
    if x.shape != x_hat.shape or mu.shape != logvar.shape:
        raise ValueError("shape error: mismatched loss inputs")
    rec = ((x - x_hat) ** 2).mean()
    per_entity = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0)
    if mu.dim() > 3:  # batched: sum per entity, average across the batch
        kl = per_entity.reshape(mu.shape[0], -1).sum(dim=1).mean()
    else:
        kl = per_entity.sum()
    total = rec + lam * kl
    if numpy_in:
        return float(total), float(rec), float(kl)
    return total, rec, kl


def encode_graph(codec: TileVAE, graph, batch_size: int = 256) -> LatentGraph:
    """Deterministic mean-path encoding of every vertex and edge tile."""
    cfg = codec.config
    if graph.vertex_tiles.shape[1] != cfg.a:
        raise ValueError(
            f"shape error: codec expects {cfg.a}-px tiles, "
            f"bundle has {graph.vertex_tiles.shape[1]}"
        )

    def run(tiles: np.ndarray) -> np.ndarray:
        if len(tiles) == 0:
            return np.zeros((0, cfg.latent_dim), dtype=np.float32)
        outs = []
        with torch.no_grad():
            for i in range(0, len(tiles), batch_size):
                x = tiles_to_tensor(tiles[i : i + batch_size])
                mu, _ = codec.encode(x)
                outs.append(
                    mu.permute(0, 2, 3, 1).reshape(len(x), -1).numpy()
                )
        return np.concatenate(outs).astype(np.float32)

    return LatentGraph(
        vertex_latents=run(graph.vertex_tiles),
        edge_latents=run(graph.edge_tiles),
        edge_index=np.asarray(graph.edge_index, dtype=np.int64).reshape(-1, 2).copy(),
        degrees=np.asarray(graph.degrees, dtype=np.int64).copy(),
        l=cfg.l,
        c=cfg.c,
    )


LATENT_MAGIC = b"HMGL"
LATENT_VERSION = 1


def write_latent_graph(path, lg: LatentGraph) -> None:
    header = LATENT_MAGIC + struct.pack(
        "<IIIII",
        LATENT_VERSION,
        lg.vertex_latents.shape[0],
        lg.edge_latents.shape[0],
        lg.l,
        lg.c,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(lg.vertex_latents.astype("<f4").tobytes())
        fh.write(lg.edge_latents.astype("<f4").tobytes())
        fh.write(lg.edge_index.astype("<u4").tobytes())
        fh.write(lg.degrees.astype("<u4").tobytes())


def read_latent_graph(path) -> LatentGraph:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != LATENT_MAGIC:
        raise ValueError(f"invalid latent graph file: bad magic in {path}")
    version, n_v, n_e, l, c = struct.unpack_from("<IIIII", raw, 4)
    if version != LATENT_VERSION:
        raise ValueError(f"invalid latent graph file: version {version}")
    d = l * l * c
    off = 24
    vl = np.frombuffer(raw, dtype="<f4", count=n_v * d, offset=off).reshape(n_v, d)
    off += n_v * d * 4
    el = np.frombuffer(raw, dtype="<f4", count=n_e * d, offset=off).reshape(n_e, d)
    off += n_e * d * 4
    ei = np.frombuffer(raw, dtype="<u4", count=n_e * 2, offset=off).reshape(n_e, 2)
    off += n_e * 8
    deg = np.frombuffer(raw, dtype="<u4", count=n_v, offset=off)
    return LatentGraph(
        vertex_latents=vl.astype(np.float32),
        edge_latents=el.astype(np.float32),
        edge_index=ei.astype(np.int64),
        degrees=deg.astype(np.int64),
        l=int(l),
        c=int(c),
    )


def save_codec(path, codec: TileVAE) -> None:
    torch.save(
        {
            "state_dict": codec.state_dict(),
            "config": {
                "a": codec.config.a,
                "f": codec.config.f,
                "c": codec.config.c,
                "lam": codec.config.lam,
                "hidden": codec.config.hidden,
            },
        },
        path,
    )


def load_codec(path) -> TileVAE:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    codec = TileVAE(CodecConfig(**blob["config"]))
    codec.load_state_dict(blob["state_dict"])
    codec.eval()
    return codec
