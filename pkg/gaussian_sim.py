"""
Exact sampling of stationary Gaussian sequences by circulant embedding,
and fractional Brownian motion (Davies-Harte on fractional Gaussian noise).
"""

import logging
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from covariance import CovarianceModel, eval_correlation
from errors import ConfigError, NonEmbeddableError

logger = logging.getLogger(__name__)

# Owned per worker; numpy Generators are not shared across threads
RngStream = np.random.Generator

DEFAULT_EMBEDDING_TOLERANCE = 1e-8


class Grid(BaseModel):
    """Uniform grid {0, h, 2h, ..., t_max}"""

    model_config = ConfigDict(frozen=True)

    t_max: float = Field(gt=0, description="Window length")
    n: int = Field(ge=2, description="Number of grid points")

    @property
    def h(self) -> float:
        return self.t_max / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n)


class CirculantEmbedding(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    model: CovarianceModel
    grid: Grid
    eigenvalues: np.ndarray = Field(description="Nonnegative circulant eigenvalues, length M")
    clip_mass: float = Field(ge=0, description="Relative l1 mass of clipped negative eigenvalues")
    min_eigenvalue: float = Field(description="Smallest eigenvalue before clipping")


class PathBundle(BaseModel):
    """Component paths X_1..X_{m+k}; the trailing axis is time"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid
    components: np.ndarray = Field(description="Shape (m+k, ..., n)")


def _circulant_spectrum(row: np.ndarray, tolerance: float):
    """Eigenvalues of the symmetric circulant with first row `row`, clipped within tolerance"""
    eigenvalues = np.fft.fft(row).real
    negative = eigenvalues < 0
    total = np.sum(np.abs(eigenvalues))
    clip_mass = float(np.sum(-eigenvalues[negative]) / total) if total > 0 else 0.0
    min_eigenvalue = float(eigenvalues.min())
    if clip_mass > tolerance:
        raise NonEmbeddableError(min_eigenvalue, clip_mass, tolerance)
    if negative.any():
        logger.debug("clipping %d negative eigenvalues (mass %.3g)", int(negative.sum()), clip_mass)
    eigenvalues = np.where(negative, 0.0, eigenvalues)
    eigenvalues.setflags(write=False)
    return eigenvalues, clip_mass, min_eigenvalue


def build_embedding(
    model: CovarianceModel,
    grid: Grid,
    tolerance: float = DEFAULT_EMBEDDING_TOLERANCE,
) -> CirculantEmbedding:
    """Embed r(0), r(h), ..., r((n-1)h) into a circulant of size M = 2(n-1)"""
    if tolerance <= 0:
        raise ConfigError("embedding tolerance must be positive")
    size = 2 * (grid.n - 1)
    j = np.arange(size)
    lags = np.minimum(j, size - j) * grid.h
    row = np.asarray(eval_correlation(model, lags), dtype=float)
    eigenvalues, clip_mass, min_eigenvalue = _circulant_spectrum(row, tolerance)
    logger.debug("embedding %s on n=%d (M=%d), clip mass %.3g", model.family, grid.n, size, clip_mass)
    return CirculantEmbedding(
        model=model,
        grid=grid,
        eigenvalues=eigenvalues,
        clip_mass=clip_mass,
        min_eigenvalue=min_eigenvalue,
    )


def _circulant_draw(eigenvalues: np.ndarray, n: int, count: int, stream: RngStream) -> np.ndarray:
    """`count` paths of length n; each complex transform yields two independent paths"""
    size = eigenvalues.size
    pairs = (count + 1) // 2
    noise = stream.standard_normal((pairs, size)) + 1j * stream.standard_normal((pairs, size))
    transformed = np.fft.fft(noise * np.sqrt(eigenvalues / size), axis=-1)[:, :n]
    paths = np.concatenate([transformed.real, transformed.imag], axis=0)
    # interleave so path 2i and 2i+1 come from the same transform
    paths = paths.reshape(2, pairs, n).transpose(1, 0, 2).reshape(2 * pairs, n)
    return paths[:count]


def sample_paths(embedding: CirculantEmbedding, count: int, stream: RngStream) -> np.ndarray:
    """Independent stationary paths with autocorrelation r(jh), shape (count, n)"""
    if count < 1:
        raise ConfigError("path count must be positive")
    return _circulant_draw(embedding.eigenvalues, embedding.grid.n, count, stream)


def sample_bundle(
    embeddings: Sequence[CirculantEmbedding],
    stream: RngStream,
    count: Optional[int] = None,
) -> PathBundle:
    """
    Draws of every component, in component order.

    Components holding the same embedding object are drawn in one batch, so
    their paths come out of shared complex transforms two at a time.
    """
    grids = {e.grid for e in embeddings}
    if len(grids) != 1:
        raise ConfigError("all component embeddings must share one grid")
    grid = embeddings[0].grid
    draws = count or 1

    groups: Dict[int, List[int]] = {}
    for position, embedding in enumerate(embeddings):
        groups.setdefault(id(embedding), []).append(position)

    components = np.empty((len(embeddings), draws, grid.n))
    for positions in groups.values():
        paths = sample_paths(embeddings[positions[0]], draws * len(positions), stream)
        components[positions] = paths.reshape(len(positions), draws, grid.n)
    if count is None:
        components = components[:, 0, :]
    return PathBundle(grid=grid, components=components)


def fgn_autocovariance(hurst: float, lag: np.ndarray) -> np.ndarray:
    lag = np.abs(np.asarray(lag, dtype=float))
    two_h = 2.0 * hurst
    return 0.5 * (np.abs(lag + 1) ** two_h - 2 * lag ** two_h + np.abs(lag - 1) ** two_h)


@lru_cache(maxsize=64)
def _fgn_spectrum(hurst: float, J: int) -> np.ndarray:
    size = 2 * J
    j = np.arange(size)
    row = fgn_autocovariance(hurst, np.minimum(j, size - j))
    eigenvalues, _, _ = _circulant_spectrum(row, DEFAULT_EMBEDDING_TOLERANCE)
    return eigenvalues


def sample_fbm(
    hurst: float,
    a: float,
    J: int,
    stream: RngStream,
    count: Optional[int] = None,
) -> np.ndarray:
    """
    Fractional Brownian motion at a*1, ..., a*J.

    Returns shape (J,), or (count, J) when count is given. Hurst 1 is the
    degenerate line Z(t) = t * xi.
    """
    if not 0 < hurst <= 1:
        raise ConfigError(f"Hurst index must lie in (0, 1], got {hurst}")
    if a <= 0 or J < 1:
        raise ConfigError("fBm grid needs a > 0 and J >= 1")

    draws = count or 1
    times = a * np.arange(1, J + 1)
    if hurst == 1.0:
        xi = stream.standard_normal((draws, 1))
        paths = xi * times
    else:
        noise = _circulant_draw(_fgn_spectrum(hurst, J), J, draws, stream)
        paths = np.cumsum(noise, axis=-1) * a ** hurst
    return paths if count is not None else paths[0]
