"""Template captions over a closed grammar."""
from __future__ import annotations

import numpy as np

from .scene import COLORS, PRIMITIVES, SHADINGS, SceneSpec

GRANULARITIES = ("class-only", "color+class", "fine")

# sentence prefixes shared by fine captions and the classification prompts
PROMPT_TEMPLATES = ("a {}", "a 3d model of a {}", "a photo of a {}", "a rendering of a {}")

SIZE_WORDS = ((0.7333, "small"), (0.8667, "medium"), (float("inf"), "large"))


def size_word(scale: float) -> str:
    for bound, word in SIZE_WORDS:
        if scale < bound:
            return word
    return SIZE_WORDS[-1][1]


def scale_token(scale: float) -> str:
    return f"{scale:.3f}"


def caption_scene(scene: SceneSpec, rng: np.random.Generator | None, granularity: str) -> str:
    if granularity == "class-only":
        return f"a 3d model of a {scene.primitive}"
    if granularity == "color+class":
        return f"a {scene.color} {scene.primitive}"
    if granularity == "fine":
        if rng is None:
            raise ValueError("fine captions need an rng")
        template = PROMPT_TEMPLATES[int(rng.integers(len(PROMPT_TEMPLATES)))]
        body = f"{size_word(scene.scale)} {scene.shading} {scene.color} {scene.primitive}"
        return template.format(body) + f" at scale {scale_token(scene.scale)}"
    raise ValueError(f"unknown granularity {granularity!r}")


def grammar_words() -> list[str]:
    """Every word any caption or prompt template can produce."""
    words = set()
    for t in PROMPT_TEMPLATES:
        words.update(t.replace("{}", "").split())
    words.update(["at", "scale"])
    words.update(w for _, w in SIZE_WORDS)
    words.update(SHADINGS)
    words.update(COLORS)
    words.update(PRIMITIVES)
    words.update(f"{v / 1000:.3f}" for v in range(600, 1001))
    return sorted(words)
