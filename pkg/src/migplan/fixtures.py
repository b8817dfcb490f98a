"""Synthetic profiles shaped like the sub-/super-linear MIG scaling families.

Every model follows ``p90 = a + batch * c / size**alpha`` milliseconds with a
single stream, so ``throughput = 1000 * batch / p90``. ``alpha < 1`` gives
sub-linear models whose best per-slice throughput is on 1/7 instances;
``alpha > 1`` gives super-linear models that prefer 7/7 and whose small
instances only meet a 100 ms ceiling at tiny batches.
"""

from __future__ import annotations

from .model import SIZES, ModelProfile, ServiceSpec

BATCHES = (1, 8, 16, 32)

# name: (fixed ms, per-item ms on 1/7, scaling exponent)
MODEL_FAMILIES = {
    "cnn-small": (3.0, 0.5, 0.50),
    "cnn-medium": (5.0, 1.0, 0.65),
    "cnn-large": (8.0, 1.6, 0.55),
    "bert-base": (6.0, 3.0, 1.00),
    "roberta-large": (12.0, 8.0, 1.20),
    "xlnet-large": (10.0, 12.0, 1.30),
}


def synthetic_profile(name: str, fixed_ms: float, item_ms: float, alpha: float) -> ModelProfile:
    entries = {}
    for size in SIZES:
        per_item = item_ms / size**alpha
        for b in BATCHES:
            p90 = fixed_ms + b * per_item
            entries[(size, b)] = (round(1000.0 * b / p90, 3), round(p90, 3))
    return ModelProfile(name, entries)


def fixture_profiles() -> dict[str, ModelProfile]:
    return {name: synthetic_profile(name, *params) for name, params in MODEL_FAMILIES.items()}


def linear_test_profile(name: str = "toy") -> ModelProfile:
    """Throughput 50/80/105/120/140 rps on 1/7..7/7 at batch 1 (20 ms everywhere)."""
    thr = {1: 50.0, 2: 80.0, 3: 105.0, 4: 120.0, 7: 140.0}
    return ModelProfile(name, {(s, 1): (t, 20.0) for s, t in thr.items()})


DAY_RPS = {
    "svc-albert": ("bert-base", 2600.0),
    "svc-bert": ("bert-base", 3400.0),
    "svc-resnet101": ("cnn-large", 9000.0),
    "svc-resnet50": ("cnn-medium", 14000.0),
    "svc-roberta": ("roberta-large", 1900.0),
}

NIGHT_RPS = {
    "svc-albert": ("bert-base", 700.0),
    "svc-bert": ("bert-base", 900.0),
    "svc-resnet101": ("cnn-large", 2600.0),
    "svc-resnet50": ("cnn-medium", 3900.0),
    "svc-roberta": ("roberta-large", 500.0),
}


def _slos(table, latency_ms=100.0):
    return [ServiceSpec(sid, model, rps, latency_ms) for sid, (model, rps) in sorted(table.items())]


def day_services() -> list[ServiceSpec]:
    return _slos(DAY_RPS)


def night_services() -> list[ServiceSpec]:
    return _slos(NIGHT_RPS)


def data_path(name: str):
    """Path of a JSON file shipped in the package's data directory."""
    from importlib.resources import files

    return files("migplan") / "data" / name


MIXED24_MODELS = ("cnn-medium", "roberta-large")
MIXED24_SEED = 3
