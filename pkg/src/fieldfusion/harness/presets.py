"""Built-in scenes, stored in the config text format."""
from __future__ import annotations

from .config import SceneConfig, parse_config

TWO_OFFSET_COPIES = """\
# One analytic object seen by two fields whose local frames differ by a
# random similarity. Registration should recover that offset exactly when the
# pose-recovery simulator is noiseless.
name = two-offset-copies
seed = 0

[shape.body]
kind = sphere
center = 0.0 0.0 0.0
radius = 0.5
density = 40.0
color = 0.8 0.7 0.2

[shape.blob]
kind = gaussian
center = 0.45 0.2 0.3
peak = 30.0
spread = 0.15
color = 0.2 0.5 0.9

[shape.base]
kind = box
lo = -0.7 -0.7 -0.6
hi = 0.7 0.7 -0.5
density = 50.0
color = 0.4 0.4 0.4

[field.A]
parts = body, blob, base

[field.B]
parts = body, blob, base
gauge = random

[truth]
parts = body, blob, base

[camera.eval]
eyes = 2.2 0.0 0.8; 0.0 2.2 0.8
target = 0.0 0.0 0.0
width = 48
height = 48
fov = 50.0
near = 0.2
far = 5.0

[register]
n_poses = 32
elevation = 0.0 30.0

[blend]
preset = indoor
transform = estimated
"""

# Field A reconstructs the red sphere sharply and the blue one as a blurry,
# inflated voxel grid; B is the mirror image. Each field also carries its own
# noisy copy of the backdrop wall.
TWO_SPHERE = """\
name = two-sphere
seed = 0

[shape.red]
kind = sphere
center = -1.0 0.0 0.0
radius = 0.7
density = 60.0
color = 0.9 0.3 0.2

[shape.blue]
kind = sphere
center = 1.0 0.0 0.0
radius = 0.7
density = 60.0
color = 0.2 0.4 0.9

[shape.wall]
kind = box
lo = -6.0 -2.4 -4.0
hi = 6.0 -2.0 4.0
density = 60.0
color = 0.6 0.6 0.5

[shape.red_blurred]
kind = degraded
source = red
resolution = 8
pad = 0.3
color = 0.9 0.3 0.2

[shape.blue_blurred]
kind = degraded
source = blue
resolution = 8
pad = 0.3
color = 0.2 0.4 0.9

[shape.wall_a]
kind = degraded
source = wall
resolution = 64 2 48
color_noise = 0.03
seed = 1

[shape.wall_b]
kind = degraded
source = wall
resolution = 64 2 48
color_noise = 0.03
seed = 2

[field.A]
parts = red, wall_a, blue_blurred
origin = -1.0 1.0 0.0

[field.B]
parts = blue, wall_b, red_blurred
origin = 1.0 1.0 0.0
gauge = random

[truth]
parts = red, blue, wall

[camera.eval]
eyes = -0.6 4.0 0.8; 0.6 4.0 0.8
target = 0.0 0.0 0.0
width = 48
height = 48
fov = 50.0
near = 0.5
far = 12.0
supersample = 2

[register]
n_poses = 32
radius = 3.0
rotation_noise = 0.2
translation_noise = 0.005
outlier_fraction = 0.1

[blend]
preset = indoor
transform = estimated
"""

PRESETS = {"two-offset-copies": TWO_OFFSET_COPIES, "two-sphere": TWO_SPHERE}


def preset_config(name: str) -> SceneConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return parse_config(PRESETS[name], f"<preset {name}>")
