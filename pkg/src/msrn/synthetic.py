"""Synthetic hyperspectral scene used by the test harness and the demo.

Each class carries a Gaussian bump signature over the band axis at a
class-specific center; pixels add i.i.d. per-band noise.  The noise level is
chosen so a nearest-class-mean classifier on raw spectra lands around 99%
accuracy, which makes the scene easy enough to learn quickly but not
degenerate.  Labels are spatially coherent Voronoi cells so the spatial
branches see consistent neighborhoods.
"""

from dataclasses import dataclass

import numpy as np

from .data import HsiCube, LabelMap, Sidecar
from .datasets import default_palette


@dataclass(frozen=True)
class SyntheticSceneSpec:
    height: int = 32
    width: int = 32
    bands: int = 20
    classes: int = 3
    bump_amplitude: float = 1.0
    bump_width: float = 2.0
    noise_std: float = 0.5
    cells_per_class: int = 2
    seed: int = 0


def class_signatures(spec: SyntheticSceneSpec) -> np.ndarray:
    """[classes, bands] bump spectra with evenly spaced centers."""
    bands = np.arange(spec.bands, dtype=np.float64)
    centers = np.linspace(spec.bands * 0.2, spec.bands * 0.8, spec.classes)
    return spec.bump_amplitude * np.exp(
        -((bands[None, :] - centers[:, None]) ** 2) / (2.0 * spec.bump_width ** 2))


def generate_scene(spec: SyntheticSceneSpec = SyntheticSceneSpec()):
    """Build (cube, labels, sidecar) for the synthetic classification task."""
    rng = np.random.default_rng(spec.seed)
    n_cells = spec.classes * spec.cells_per_class
    centers_r = rng.uniform(0, spec.height, size=n_cells)
    centers_c = rng.uniform(0, spec.width, size=n_cells)
    cell_class = np.arange(n_cells) % spec.classes + 1

    rows, cols = np.meshgrid(np.arange(spec.height), np.arange(spec.width),
                             indexing="ij")
    dist = ((rows[..., None] - centers_r) ** 2
            + (cols[..., None] - centers_c) ** 2)
    labels = cell_class[np.argmin(dist, axis=-1)].astype(np.uint16)

    signatures = class_signatures(spec)
    values = signatures[labels - 1].astype(np.float64)
    values += rng.normal(0.0, spec.noise_std, size=values.shape)

    names = [f"material-{i + 1}" for i in range(spec.classes)]
    sidecar = Sidecar(class_names=names, palette=default_palette(spec.classes))
    return HsiCube(values=values), LabelMap(labels=labels), sidecar


def nearest_mean_accuracy(cube: HsiCube, labels: LabelMap,
                          spec: SyntheticSceneSpec) -> float:
    """Accuracy of classifying each pixel to the nearest true class signature.

    This is the scene's difficulty gauge: it uses the generating signatures,
    not fitted ones, so it is independent of any training code.
    """
    signatures = class_signatures(spec)
    flat = cube.values.reshape(-1, cube.bands)
    dist = ((flat[:, None, :] - signatures[None, :, :]) ** 2).sum(axis=2)
    predicted = dist.argmin(axis=1) + 1
    truth = labels.labels.reshape(-1)
    return float(np.mean(predicted == truth))
