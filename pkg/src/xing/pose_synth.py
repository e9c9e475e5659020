"""Procedural stick-figure episodes: paired person images and joint heatmaps.

An episode is one identity (colors, limb thickness, bone lengths) rendered in
two sampled poses: source and target images in [-1, 1] plus 18-channel
Gaussian keypoint heatmaps for each pose. Everything is a pure function of
the seed, so datasets are reproducible and never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor

__all__ = [
    "JOINT_NAMES",
    "BONES",
    "ANGLE_RANGES",
    "Skeleton",
    "AppearanceSpec",
    "Episode",
    "render_heatmaps",
    "render_person",
    "sample_episode",
    "collate",
    "derive_seed",
    "heatmap_sigma",
]

# Joint order is fixed and indexed everywhere by position.
JOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)
_J = {name: i for i, name in enumerate(JOINT_NAMES)}

# (joint_a, joint_b, body part) — the drawn limbs; eyes/ears are heatmap-only.
BONES = (
    ("neck", "nose", "head"),
    ("neck", "r_shoulder", "torso"),
    ("neck", "l_shoulder", "torso"),
    ("neck", "r_hip", "torso"),
    ("neck", "l_hip", "torso"),
    ("r_hip", "l_hip", "torso"),
    ("r_shoulder", "r_elbow", "right_arm"),
    ("r_elbow", "r_wrist", "right_arm"),
    ("l_shoulder", "l_elbow", "left_arm"),
    ("l_elbow", "l_wrist", "left_arm"),
    ("r_hip", "r_knee", "right_leg"),
    ("r_knee", "r_ankle", "right_leg"),
    ("l_hip", "l_knee", "left_leg"),
    ("l_knee", "l_ankle", "left_leg"),
)

PARTS = ("head", "torso", "right_arm", "left_arm", "right_leg", "left_leg")

# The ten articulation angles (radians) a pose is sampled from.
ANGLE_RANGES = {
    "lean": (-0.25, 0.25),        # torso tilt from vertical
    "head_tilt": (-0.35, 0.35),   # head relative to torso
    "shoulder_r": (-0.75, 0.75),  # upper-arm swing from straight down
    "shoulder_l": (-0.75, 0.75),
    "elbow_r": (-1.2, 1.2),       # forearm relative to upper arm
    "elbow_l": (-1.2, 1.2),
    "hip_r": (-0.55, 0.55),       # upper-leg swing from straight down
    "hip_l": (-0.55, 0.55),
    "knee_r": (0.0, 1.0),         # lower-leg bend (one direction)
    "knee_l": (-1.0, 0.0),
}
ANGLE_NAMES = tuple(ANGLE_RANGES)

# Segment lengths as fractions of the figure height.
_PROPORTIONS = {
    "torso": 0.30,
    "head": 0.15,
    "shoulder_halfwidth": 0.13,
    "hip_halfwidth": 0.08,
    "upper_arm": 0.16,
    "forearm": 0.15,
    "upper_leg": 0.23,
    "lower_leg": 0.22,
}


@dataclass
class Skeleton:
    """18 joints as (x, y) pixel positions with per-joint visibility."""

    joints: np.ndarray   # [18, 2] float64, columns (x, y)
    visible: np.ndarray  # [18] bool

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(18, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(18)

    def bone_lengths(self) -> dict:
        out = {}
        for a, b, _part in BONES:
            out[(a, b)] = float(np.linalg.norm(self.joints[_J[a]] - self.joints[_J[b]]))
        return out


@dataclass
class AppearanceSpec:
    """Identity appearance: per-part colors, limb thickness, background."""

    part_colors: dict      # part name -> rgb array in [-1, 1]
    thickness: float       # stroke halfwidth*2 in pixels, >= 1
    background: np.ndarray # rgb in [-1, 1]

    def __post_init__(self):
        if self.thickness < 1.0:
            raise ContractError(f"limb thickness must be >= 1, got {self.thickness}")
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        self.part_colors = {k: np.asarray(v, dtype=np.float64).reshape(3)
                            for k, v in self.part_colors.items()}
        for name, col in list(self.part_colors.items()) + [("background", self.background)]:
            if np.abs(col).max() > 1.0:
                raise ContractError(f"{name} color outside [-1, 1]: {col}")

    @property
    def head_radius(self) -> float:
        return 2.1 * self.thickness + 0.6


@dataclass
class Episode:
    """One identity in two poses, plus the pose heatmaps the model consumes."""

    i_s: Tensor  # [3, h, w] source image
    i_t: Tensor  # [3, h, w] target image
    p_s: Tensor  # [18, h, w] source pose heatmaps
    p_t: Tensor  # [18, h, w] target pose heatmaps
    seed: int = 0
    skeleton_s: Skeleton | None = None
    skeleton_t: Skeleton | None = None
    appearance: AppearanceSpec | None = None


def heatmap_sigma(h: int) -> float:
    """Default Gaussian radius: 1.5 px at 64-tall images, proportional above/below."""
    return 1.5 * h / 64.0


def render_heatmaps(sk: Skeleton, h: int, w: int, sigma: float) -> Tensor:
    """Channel j = exp(-((x-xj)^2+(y-yj)^2)/(2 sigma^2)); zeros if invisible."""
    if sigma <= 0:
        raise ContractError(f"sigma must be > 0, got {sigma}")
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    maps = np.zeros((18, h, w))
    for j in range(18):
        if not sk.visible[j]:
            continue
        xj, yj = sk.joints[j]
        maps[j] = np.exp(-((xs - xj) ** 2 + (ys - yj) ** 2) / (2.0 * sigma * sigma))
    return Tensor(maps)


def _segment_distance(ys, xs, p0, p1):
    """Distance from every pixel center to the segment p0-p1 (points are (x, y))."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    L2 = dx * dx + dy * dy
    if L2 < 1e-12:
        return np.hypot(xs - p0[0], ys - p0[1])
    t = ((xs - p0[0]) * dx + (ys - p0[1]) * dy) / L2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(xs - (p0[0] + t * dx), ys - (p0[1] + t * dy))


def render_person(sk: Skeleton, app: AppearanceSpec, h: int, w: int) -> Tensor:
    """Rasterize the figure: background fill, anti-aliased bones, head disk.

    Coverage per stroke is clip(0.5 + halfwidth - distance, 0, 1), i.e. a
    one-pixel soft edge; strokes composite over in a fixed order with the
    head painted last.
    """
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    img = np.tile(app.background.reshape(3, 1, 1), (1, h, w))
    halfw = app.thickness / 2.0

    order = ("left_leg", "right_leg", "left_arm", "right_arm", "torso", "head")
    for part in order:
        color = app.part_colors[part].reshape(3, 1, 1)
        for a, b, bone_part in BONES:
            if bone_part != part:
                continue
            ia, ib = _J[a], _J[b]
            if not (sk.visible[ia] and sk.visible[ib]):
                continue
            d = _segment_distance(ys, xs, sk.joints[ia], sk.joints[ib])
            cov = np.clip(0.5 + halfw - d, 0.0, 1.0)
            img = img * (1.0 - cov) + color * cov
        if part == "head" and sk.visible[_J["nose"]]:
            d = np.hypot(xs - sk.joints[_J["nose"], 0], ys - sk.joints[_J["nose"], 1])
            cov = np.clip(0.5 + app.head_radius - d, 0.0, 1.0)
            img = img * (1.0 - cov) + color * cov
    return Tensor(np.clip(img, -1.0, 1.0))


def _unit_up(theta):
    # y grows downward, so "up" is -y; theta tilts toward +x
    return np.array([np.sin(theta), -np.cos(theta)])


def _unit_down(theta):
    return np.array([np.sin(theta), np.cos(theta)])


def _perp(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def _build_skeleton(center, height, lengths, angles) -> Skeleton:
    """Deterministic forward kinematics from the 10 angles."""
    a = dict(zip(ANGLE_NAMES, angles))
    L = {k: v * height for k, v in lengths.items()}
    j = np.zeros((18, 2))

    pelvis = np.asarray(center, dtype=np.float64)
    neck = pelvis + L["torso"] * _unit_up(a["lean"])
    head_dir = a["lean"] + a["head_tilt"]
    nose = neck + L["head"] * _unit_up(head_dir)

    j[_J["neck"]] = neck
    j[_J["nose"]] = nose
    j[_J["r_hip"]] = pelvis - L["hip_halfwidth"] * _perp(a["lean"])
    j[_J["l_hip"]] = pelvis + L["hip_halfwidth"] * _perp(a["lean"])
    j[_J["r_shoulder"]] = neck - L["shoulder_halfwidth"] * _perp(a["lean"])
    j[_J["l_shoulder"]] = neck + L["shoulder_halfwidth"] * _perp(a["lean"])

    for side, sgn in (("r", -1.0), ("l", 1.0)):
        sh = j[_J[f"{side}_shoulder"]]
        elbow = sh + L["upper_arm"] * _unit_down(a[f"shoulder_{side}"])
        wrist = elbow + L["forearm"] * _unit_down(a[f"shoulder_{side}"] + a[f"elbow_{side}"])
        j[_J[f"{side}_elbow"]] = elbow
        j[_J[f"{side}_wrist"]] = wrist

        hip = j[_J[f"{side}_hip"]]
        knee = hip + L["upper_leg"] * _unit_down(a[f"hip_{side}"])
        ankle = knee + L["lower_leg"] * _unit_down(a[f"hip_{side}"] + a[f"knee_{side}"])
        j[_J[f"{side}_knee"]] = knee
        j[_J[f"{side}_ankle"]] = ankle

        j[_J[f"{side}_eye"]] = nose + sgn * 0.035 * height * _perp(head_dir) \
            + 0.02 * height * _unit_up(head_dir)
        j[_J[f"{side}_ear"]] = nose + sgn * 0.06 * height * _perp(head_dir) \
            - 0.01 * height * _unit_up(head_dir)

    return Skeleton(joints=j, visible=np.ones(18, dtype=bool))


def _sample_identity(rng: np.random.Generator, h: int, w: int):
    """Colors, stroke width, background, and per-identity bone lengths."""
    colors = {}
    for part in PARTS:
        hi = rng.uniform(0.45, 1.0)
        mid = rng.uniform(-0.5, 0.5)
        lo = rng.uniform(-1.0, -0.3)
        colors[part] = rng.permutation(np.array([hi, mid, lo]))
    base = rng.uniform(-1.0, -0.92)
    background = np.clip(base + rng.uniform(0.0, 0.06, size=3), -1.0, 1.0)
    thickness = max(1.0, rng.uniform(1.7, 2.6) * h / 64.0)
    app = AppearanceSpec(part_colors=colors, thickness=thickness, background=background)

    height = rng.uniform(0.64, 0.74) * h
    # Cap so the rest pose (the sampler's fallback) provably fits vertically:
    # nose sits ~0.45*height above the pelvis at cy=0.6h, eyes slightly higher,
    # ankles ~0.45*height below. 0.93 absorbs small fallback angle jitter.
    margin = app.thickness / 2.0 + 1.0
    hr = app.head_radius + 1.0
    cap = 0.93 * min((0.6 * h - hr) / 0.45,
                     (0.6 * h - margin) / 0.47,
                     (0.4 * h - 1.0 - margin) / 0.45)
    height = min(height, cap)
    lengths = {k: v * rng.uniform(0.95, 1.05) for k, v in _PROPORTIONS.items()}
    return app, height, lengths


def _in_bounds(sk: Skeleton, app: AppearanceSpec, h: int, w: int) -> bool:
    margin = app.thickness / 2.0 + 1.0
    x, y = sk.joints[:, 0], sk.joints[:, 1]
    if not ((x >= margin) & (x <= w - 1 - margin) & (y >= margin) & (y <= h - 1 - margin)).all():
        return False
    hr = app.head_radius + 1.0
    nx, ny = sk.joints[_J["nose"]]
    return hr <= nx <= w - 1 - hr and hr <= ny <= h - 1 - hr


def _sample_skeleton(rng, app, height, lengths, h, w) -> Skeleton:
    lo = np.array([ANGLE_RANGES[n][0] for n in ANGLE_NAMES])
    hi = np.array([ANGLE_RANGES[n][1] for n in ANGLE_NAMES])
    for attempt in range(200):
        cx = w / 2.0 + rng.uniform(-0.09, 0.09) * w
        cy = 0.60 * h + rng.uniform(-0.045, 0.045) * h
        angles = rng.uniform(lo, hi)
        if attempt >= 150:  # guaranteed-fit fallback: arms/legs near rest
            angles = angles * 0.15
            cx, cy = w / 2.0, 0.60 * h
        sk = _build_skeleton((cx, cy), height, lengths, angles)
        if _in_bounds(sk, app, h, w):
            return sk
    raise ContractError(f"could not fit a figure into {h}x{w}")


def sample_episode(rng_seed: int, h: int, w: int) -> Episode:
    """One identity, two poses, four tensors; fully determined by the seed."""
    if h < 16 or w < 16:
        raise ContractError(f"image size must be at least 16x16, got {h}x{w}")
    rng = np.random.default_rng(rng_seed)
    app, height, lengths = _sample_identity(rng, h, w)
    sk_s = _sample_skeleton(rng, app, height, lengths, h, w)
    sk_t = _sample_skeleton(rng, app, height, lengths, h, w)
    sigma = heatmap_sigma(h)
    return Episode(
        i_s=render_person(sk_s, app, h, w),
        i_t=render_person(sk_t, app, h, w),
        p_s=render_heatmaps(sk_s, h, w, sigma),
        p_t=render_heatmaps(sk_t, h, w, sigma),
        seed=rng_seed,
        skeleton_s=sk_s,
        skeleton_t=sk_t,
        appearance=app,
    )


def collate(episodes) -> tuple:
    """Stack a list of episodes into batched (i_s, i_t, p_s, p_t) tensors."""
    if not episodes:
        raise ContractError("collate: empty episode list")
    i_s = Tensor(np.stack([e.i_s.data for e in episodes]))
    i_t = Tensor(np.stack([e.i_t.data for e in episodes]))
    p_s = Tensor(np.stack([e.p_s.data for e in episodes]))
    p_t = Tensor(np.stack([e.p_t.data for e in episodes]))
    return i_s, i_t, p_s, p_t


def derive_seed(*parts) -> int:
    """Stable seed derivation for (base, namespace, step, index) tuples."""
    return int(np.random.SeedSequence([int(p) & 0x7FFFFFFF for p in parts])
               .generate_state(1, dtype=np.uint64)[0])
