import numpy as np
import pytest

from mvclip.encoder import EncoderConfig, VisionEncoder


def random_tiny_config(rng: np.random.Generator, **overrides) -> EncoderConfig:
    patch = int(rng.choice([2, 4]))
    grid = int(rng.integers(1, 4))
    heads = int(rng.choice([1, 2]))
    depth = int(rng.integers(1, 4))
    fields = dict(image_size=patch * grid, patch_size=patch, width=heads * int(rng.choice([2, 4])), depth=depth,
                  heads=heads, mva_enabled=True, embed_dim=int(rng.integers(2, 6)), max_views=6)
    fields.update(overrides)
    fields.setdefault("frozen_prefix", int(rng.integers(0, fields["depth"] + 1)))
    return EncoderConfig(**fields)


def random_encoder(rng: np.random.Generator, dtype=np.float64, **overrides) -> VisionEncoder:
    cfg = random_tiny_config(rng, **overrides)
    return VisionEncoder(cfg, seed=int(rng.integers(2**31))).astype(dtype)


@pytest.fixture
def tiny_encoder():
    cfg = EncoderConfig(image_size=8, patch_size=4, width=8, depth=2, heads=2, frozen_prefix=1, embed_dim=4, max_views=6)
    return VisionEncoder(cfg, seed=3).astype(np.float64)


# -- acceptance reporting --------------------------------------------------------------

_CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def report():
    """report(n, ok, detail) records one check of acceptance criterion n and echoes it."""
    def record(n: int, ok: bool, detail: str) -> bool:
        _CRITERIA.setdefault(n, []).append((bool(ok), detail))
        print(f"Criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        checks = _CRITERIA[n]
        ok = all(c for c, _ in checks)
        terminalreporter.write_line(f"Criterion {n}: {'PASS' if ok else 'FAIL'} - "
                                    + "; ".join(d for _, d in checks))
