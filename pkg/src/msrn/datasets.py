"""Reference metadata for the two benchmark scenes.

Class names and the published per-class train/val/test counts; feed the
counts to ``split_from_counts``/``import_split`` to reproduce those sample
budgets exactly on your own copies of the scenes.
"""

import colorsys
import json
from typing import List, Tuple

INDIAN_PINES_CLASSES = [
    "Alfalfa", "Corn-notill", "Corn-mintill", "Corn", "Grass-pasture",
    "Grass-trees", "Grass-pasture-mowed", "Hay-windrowed", "Oats",
    "Soybean-notill", "Soybean-mintill", "Soybean-clean", "Wheat", "Woods",
    "Buildings-Grass-Trees", "Stone-Steel-Towers",
]

# published sample budgets: (train, val, test) per class, 10%/10%/80% regime
INDIAN_PINES_SPLIT_COUNTS = [
    (10, 3, 33), (285, 133, 1011), (165, 85, 579), (48, 24, 165),
    (97, 44, 342), (146, 71, 513), (6, 5, 17), (96, 57, 325), (4, 6, 10),
    (194, 96, 682), (490, 265, 1699), (119, 58, 417), (41, 28, 136),
    (252, 138, 875), (78, 36, 272), (19, 7, 67),
]

PAVIA_UNIVERSITY_CLASSES = [
    "Asphalt", "Meadows", "Gravels", "Trees", "Painted-Metal-Sheets",
    "Bare-Soil", "Bitumen", "Self-Blocking-Bricks", "Shadows",
]

# published sample budgets, 5%/5%/90% regime
PAVIA_UNIVERSITY_SPLIT_COUNTS = [
    (331, 332, 5968), (932, 933, 16784), (105, 105, 1889), (153, 153, 2758),
    (67, 67, 1211), (251, 252, 4526), (66, 67, 1197), (185, 183, 3314),
    (48, 47, 852),
]

DATASETS = {
    "indian_pines": (INDIAN_PINES_CLASSES, INDIAN_PINES_SPLIT_COUNTS),
    "pavia_university": (PAVIA_UNIVERSITY_CLASSES, PAVIA_UNIVERSITY_SPLIT_COUNTS),
}


def default_palette(num_classes: int) -> List[Tuple[int, int, int]]:
    """Deterministic, well-separated colors around the hue wheel."""
    palette = []
    for i in range(num_classes):
        hue = i / num_classes
        sat = 0.85 if i % 2 == 0 else 0.55
        r, g, b = colorsys.hsv_to_rgb(hue, sat, 0.95)
        palette.append((round(r * 255), round(g * 255), round(b * 255)))
    return palette


def split_counts_document(dataset: str, seed: int = 0) -> dict:
    """The per-class-counts split file for a named reference dataset."""
    if dataset not in DATASETS:
        raise KeyError(f"unknown dataset {dataset!r}; have {sorted(DATASETS)}")
    _, counts = DATASETS[dataset]
    return {
        "seed": seed,
        "classes": [
            {"class": i + 1, "train": tr, "val": va, "test": te}
            for i, (tr, va, te) in enumerate(counts)
        ],
    }


def write_split_counts(dataset: str, path, seed: int = 0) -> None:
    with open(path, "w") as fh:
        json.dump(split_counts_document(dataset, seed), fh, indent=2, sort_keys=True)
        fh.write("\n")
