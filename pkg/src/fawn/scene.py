"""Synthetic two-technology CSI scenes.

A 2-D free-space room with one 5G link and one Wi-Fi link. Each present entity
adds a single-bounce scatter path to the line-of-sight path; the 5G emitter is
a ceiling unit whose gain fades to zero right underneath it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import CELL_SIZE, GRID_X, GRID_Y, Cell, CsiSample, SceneLabel
from .numerics import Rng, splitmix64

C_LIGHT = 2.99792458e8
P_PERSON = 0.75
P_ROBOT = 0.75

Point = tuple[float, float]
# A scene is exactly what the network is asked to recover.
Scene = SceneLabel


@dataclass(frozen=True)
class RoomLayout:
    nx: int = GRID_X
    ny: int = GRID_Y
    cell_size: float = CELL_SIZE
    emitter_5g: Point = (4.8, 4.8)
    receiver_5g: Point = (0.0, 0.6)
    emitter_wifi: Point = (4.8, 0.6)
    receiver_wifi: Point = (0.0, 5.4)

    def center(self, cell: Cell) -> Point:
        return self.cell_size * cell[0], self.cell_size * cell[1]

    @property
    def devices(self) -> list[Point]:
        return [self.emitter_5g, self.receiver_5g, self.emitter_wifi, self.receiver_wifi]

    def device_cells(self) -> set[Cell]:
        out = set()
        for x, y in self.devices:
            ix, iy = round(x / self.cell_size), round(y / self.cell_size)
            if math.isclose(ix * self.cell_size, x, abs_tol=1e-9) and math.isclose(iy * self.cell_size, y, abs_tol=1e-9):
                out.add((ix, iy))
        return out

    def free_cells(self) -> list[Cell]:
        """Cells an entity may occupy, row by row; device cells are excluded."""
        taken = self.device_cells()
        return [(ix, iy) for iy in range(self.ny) for ix in range(self.nx) if (ix, iy) not in taken]


@dataclass(frozen=True)
class ScattererModel:
    rho_person: float = 0.8
    rho_robot: float = 1.5
    sigma: float = 0.01
    d0: float = 1.2
    max_drift: float = 0.05

    def __post_init__(self):
        if self.rho_person <= 0 or self.rho_robot <= 0:
            raise ValueError("reflectivities must be positive")
        if self.sigma < 0:
            raise ValueError("noise level must be non-negative")
        if self.d0 <= 0:
            raise ValueError("null radius must be positive")


@dataclass(frozen=True)
class LinkSpec:
    name: str
    center_freq: float
    spacing: float
    indices: tuple[int, ...] = field(repr=False)
    symbols: int
    emitter: str
    receiver: str
    torus_null: bool

    @property
    def n_subcarriers(self) -> int:
        return len(self.indices)

    def frequencies(self) -> np.ndarray:
        return self.center_freq + np.asarray(self.indices, dtype=np.float64) * self.spacing

    def endpoints(self, layout: RoomLayout) -> tuple[Point, Point]:
        return getattr(layout, self.emitter), getattr(layout, self.receiver)


LINK_5G = LinkSpec(
    name="5g",
    center_freq=3.5e9,
    spacing=30e3,
    indices=tuple(k - 180 for k in range(360)),
    symbols=4,
    emitter="emitter_5g",
    receiver="receiver_5g",
    torus_null=True,
)
LINK_WIFI = LinkSpec(
    name="wifi",
    center_freq=5.18e9,
    spacing=312.5e3,
    indices=tuple(list(range(-26, 0)) + list(range(1, 27))),
    symbols=1,
    emitter="emitter_wifi",
    receiver="receiver_wifi",
    torus_null=False,
)


def _dist(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def sample_scene(rng: Rng, layout: RoomLayout | None = None) -> Scene:
    """Independent presence draws (p=0.75 each), then uniform free cells; the robot
    is redrawn while it collides with the person."""
    layout = layout or RoomLayout()
    cells = layout.free_cells()
    person_in = rng.uniform() < P_PERSON
    robot_in = rng.uniform() < P_ROBOT
    person = cells[rng.below(len(cells))] if person_in else None
    robot = None
    if robot_in:
        robot = cells[rng.below(len(cells))]
        while robot == person:
            robot = cells[rng.below(len(cells))]
    return Scene(person, robot)


def scatter_gain(link: LinkSpec, d_es: float, model: ScattererModel) -> float:
    return min(d_es / model.d0, 1.0) if link.torus_null else 1.0


def channel_response(
    scene: Scene,
    link: LinkSpec,
    layout: RoomLayout | None = None,
    model: ScattererModel | None = None,
    k: int | None = None,
) -> np.ndarray | complex:
    """Complex channel gain on subcarrier ``k``, or on all subcarriers when ``k`` is None."""
    layout = layout or RoomLayout()
    model = model or ScattererModel()
    freqs = link.frequencies()
    if k is not None:
        if not 0 <= k < link.n_subcarriers:
            raise IndexError(f"subcarrier {k} out of range for {link.name}")
        freqs = freqs[k : k + 1]
    tx, rx = link.endpoints(layout)
    d_er = _dist(tx, rx)
    h = np.exp(-2j * np.pi * freqs * d_er / C_LIGHT) / d_er
    for rho, cell in ((model.rho_person, scene.person), (model.rho_robot, scene.robot)):
        if cell is None:
            continue
        s = layout.center(cell)
        d_es, d_sr = _dist(tx, s), _dist(s, rx)
        if d_es == 0.0 or d_sr == 0.0:
            raise ValueError(f"entity at {cell} sits on a {link.name} device")
        amp = rho * scatter_gain(link, d_es, model) / (d_es * d_sr)
        h = h + amp * np.exp(-2j * np.pi * freqs * (d_es + d_sr) / C_LIGHT)
    return complex(h[0]) if k is not None else h


def synth_csi_link(
    scene: Scene,
    link: LinkSpec,
    layout: RoomLayout | None,
    model: ScattererModel | None,
    rng: Rng,
) -> np.ndarray:
    """``2 x K x S`` real/imaginary CSI, normalised so the line-of-sight term has unit magnitude.

    Draw order: one phase drift, then ``2*K*S`` Gaussian noise values laid out
    like the output tensor.
    """
    layout = layout or RoomLayout()
    model = model or ScattererModel()
    tx, rx = link.endpoints(layout)
    d_er = _dist(tx, rx)
    h = channel_response(scene, link, layout, model)
    drift = model.max_drift * (2.0 * rng.uniform() - 1.0)
    m = np.arange(link.symbols)
    hm = h[:, None] * np.exp(1j * m * drift)[None, :]
    noise = (model.sigma / d_er) * rng.normal_array(2 * link.n_subcarriers * link.symbols)
    noise = noise.reshape(2, link.n_subcarriers, link.symbols)
    out = np.stack([hm.real, hm.imag]) + noise
    return out * d_er


def synth_sample(
    scene: Scene,
    layout: RoomLayout | None,
    model: ScattererModel | None,
    rng: Rng,
) -> CsiSample:
    x5g = synth_csi_link(scene, LINK_5G, layout, model, rng)
    xwifi = synth_csi_link(scene, LINK_WIFI, layout, model, rng)
    return CsiSample(x5g, xwifi, SceneLabel(scene.person, scene.robot))


def sample_rng(seed: int, index: int) -> Rng:
    """Child generator for sample ``index``; independent of generation order."""
    return Rng(splitmix64(seed ^ index))


def generate_one(index: int, seed: int, layout: RoomLayout | None = None, model: ScattererModel | None = None) -> CsiSample:
    rng = sample_rng(seed, index)
    return synth_sample(sample_scene(rng, layout), layout, model, rng)


def generate_dataset(
    n: int = 400,
    seed: int = 42,
    layout: RoomLayout | None = None,
    model: ScattererModel | None = None,
    workers: int = 1,
) -> list[CsiSample]:
    if n < 1:
        raise ValueError("dataset needs at least one sample")
    layout = layout or RoomLayout()
    model = model or ScattererModel()
    if workers <= 1:
        return [generate_one(i, seed, layout, model) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: generate_one(i, seed, layout, model), range(n)))
