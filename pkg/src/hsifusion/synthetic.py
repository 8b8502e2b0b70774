"""Synthetic low-rank cubes for demos and end-to-end tests.

Each cube mixes a few smooth random endmember spectra with smooth random
abundance maps (a coarse Gaussian field blown up bicubically and pushed
through a softmax), so the data has the spectral structure fusion relies on
while staying cheap to generate.
"""

from __future__ import annotations

import numpy as np

from .autodiff import as_tensor
from .datacube import HsiCube
from .degrade import ObservationModel, simulate_observations
from .ops import bicubic_upsample


def smooth_spectra(n: int, bands: int, rng: np.random.Generator) -> np.ndarray:
    """(n, bands) positive smooth curves, each peaking at 1."""
    idx = np.arange(bands, dtype=np.float64)
    out = np.empty((n, bands))
    for i in range(n):
        curve = np.full(bands, rng.uniform(0.05, 0.3))
        for _ in range(2):
            center = rng.uniform(0, bands - 1)
            width = rng.uniform(bands / 8, bands / 2)
            curve = curve + rng.uniform(0.3, 1.0) * np.exp(-((idx - center) ** 2) / (2 * width**2))
        out[i] = curve / curve.max()
    return out


def smooth_abundances(
    n: int, size: int, rng: np.random.Generator, coarse: int = 8, sharpness: float = 4.0
) -> np.ndarray:
    """(n, size, size) maps on the simplex, smooth at roughly size/coarse scale."""
    if size % coarse:
        raise ValueError(f"size {size} not divisible by coarse grid {coarse}")
    fields = rng.normal(size=(n, coarse, coarse))
    up = bicubic_upsample(as_tensor(fields, dtype=np.float64), size // coarse).data
    e = np.exp(sharpness * (up - up.max(axis=0, keepdims=True)))
    return e / e.sum(axis=0, keepdims=True)


def make_toy_cube(
    rng: np.random.Generator,
    bands: int = 8,
    size: int = 64,
    n_endmembers: int = 3,
    coarse: int = 8,
    name: str | None = None,
) -> HsiCube:
    spectra = smooth_spectra(n_endmembers, bands, rng)
    abund = smooth_abundances(n_endmembers, size, rng, coarse=coarse)
    cube = np.tensordot(spectra.T, abund, axes=(1, 0))
    return HsiCube(cube.astype(np.float32), value_range=(0.0, 1.0), name=name)


def make_toy_dataset(
    n_images: int,
    seed: int = 0,
    bands: int = 8,
    size: int = 64,
    n_endmembers: int = 3,
    coarse: int = 8,
) -> list[HsiCube]:
    rng = np.random.default_rng(seed)
    return [
        make_toy_cube(rng, bands=bands, size=size, n_endmembers=n_endmembers,
                      coarse=coarse, name=f"toy{i:03d}")
        for i in range(n_images)
    ]


def observed_triples(cubes, model: ObservationModel):
    """[(x0, y, z)] training triples from ground-truth cubes (noise-free)."""
    triples = []
    for cube in cubes:
        y, z = simulate_observations(cube, model)
        triples.append((cube.data, y.data, z.data))
    return triples
