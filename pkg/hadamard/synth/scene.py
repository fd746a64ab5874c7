import hashlib
import json
from dataclasses import dataclass

import numpy as np

from hadamard.autodiff.tensor import Tensor
from hadamard.core.constants import (
    OBJECT_MAX_SIZE,
    OBJECT_MIN_SIZE,
    PLACEMENT_MAX_ATTEMPTS,
    SCENE_MARGIN,
)
from hadamard.core.enums import Color, Shape
from hadamard.domain.exceptions import PlacementError
from hadamard.synth.rng import Rng64

DEFAULT_IMAGE_SIZE = 56
MIN_OBJECTS = 2
# shapes are unique within a scene, which caps the count at len(Shape)
MAX_OBJECTS = len(Shape)

RGB: dict[Color, tuple[float, float, float]] = {
    Color.RED: (1.0, 0.0, 0.0),
    Color.GREEN: (0.0, 1.0, 0.0),
    Color.BLUE: (0.0, 0.0, 1.0),
    Color.YELLOW: (1.0, 1.0, 0.0),
}


@dataclass(frozen=True)
class SceneObject:
    shape: Shape
    color: Color
    center: tuple[int, int]  # (row, col)
    size: int

    @property
    def top(self) -> int:
        return self.center[0] - self.size // 2

    @property
    def left(self) -> int:
        return self.center[1] - self.size // 2

    @property
    def bottom(self) -> int:
        return self.top + self.size

    @property
    def right(self) -> int:
        return self.left + self.size


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...]
    image_size: int = DEFAULT_IMAGE_SIZE

    def digest(self) -> str:
        payload = [
            [o.shape.value, o.color.value, list(o.center), o.size] for o in self.objects
        ]
        return hashlib.sha256(json.dumps(payload).encode("utf-8")).hexdigest()


def separated(a: SceneObject, b: SceneObject, margin: int = SCENE_MARGIN) -> bool:
    return (
        a.bottom + margin <= b.top
        or b.bottom + margin <= a.top
        or a.right + margin <= b.left
        or b.right + margin <= a.left
    )


def generate_scene(rng: Rng64, image_size: int = DEFAULT_IMAGE_SIZE) -> SceneSpec:
    """Rejection-sample 2-3 objects with distinct shapes and colors and disjoint boxes."""
    count = MIN_OBJECTS + rng.below(MAX_OBJECTS - MIN_OBJECTS + 1)
    shapes = list(Shape)
    rng.shuffle(shapes)
    colors = list(Color)
    rng.shuffle(colors)

    objects: list[SceneObject] = []
    attempts = 0
    for index in range(count):
        while True:
            if attempts >= PLACEMENT_MAX_ATTEMPTS:
                raise PlacementError(f"No placement for object {index} after {attempts} attempts")
            attempts += 1
            size = OBJECT_MIN_SIZE + rng.below(OBJECT_MAX_SIZE - OBJECT_MIN_SIZE + 1)
            top = rng.below(image_size - size + 1)
            left = rng.below(image_size - size + 1)
            candidate = SceneObject(
                shape=shapes[index],
                color=colors[index],
                center=(top + size // 2, left + size // 2),
                size=size,
            )
            if all(separated(candidate, other) for other in objects):
                objects.append(candidate)
                break
    return SceneSpec(objects=tuple(objects), image_size=image_size)


def object_mask(obj: SceneObject, image_size: int) -> np.ndarray:
    """Boolean H x W coverage of one object; always inside its bounding box."""
    rows, cols = np.ogrid[0:image_size, 0:image_size]
    in_box = (rows >= obj.top) & (rows < obj.bottom) & (cols >= obj.left) & (cols < obj.right)
    center_row = obj.top + (obj.size - 1) / 2
    center_col = obj.left + (obj.size - 1) / 2

    if obj.shape == Shape.SQUARE:
        return in_box
    if obj.shape == Shape.CIRCLE:
        radius = obj.size / 2
        return in_box & ((rows - center_row) ** 2 + (cols - center_col) ** 2 <= radius * radius)
    # apex at the top edge, base on the bottom row
    depth = rows - obj.top
    return (
        in_box
        & (2 * (cols - center_col) <= depth)
        & (2 * (center_col - cols) <= depth)
        & (rows <= obj.bottom - 1)
    )


def render(scene: SceneSpec) -> Tensor:
    """Rasterize onto a black 3 x H x W canvas with flat colors and no anti-aliasing."""
    image = np.zeros((3, scene.image_size, scene.image_size))
    for obj in scene.objects:
        mask = object_mask(obj, scene.image_size)
        for channel, level in enumerate(RGB[obj.color]):
            image[channel][mask] = level
    return image
