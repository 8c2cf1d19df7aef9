"""Labels and samples shared by the simulator, the model and the file formats."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

GRID_X = 9
GRID_Y = 10
CELL_SIZE = 0.6

SHAPE_5G = (2, 360, 4)
SHAPE_WIFI = (2, 52, 1)

Cell = tuple[int, int]


def check_cell(cell: Cell, who: str = "cell"):
    ix, iy = cell
    if not (0 <= ix < GRID_X and 0 <= iy < GRID_Y):
        raise IndexError(f"{who} {cell} outside the {GRID_X}x{GRID_Y} grid")


def cell_center(cell: Cell) -> tuple[float, float]:
    return CELL_SIZE * cell[0], CELL_SIZE * cell[1]


@dataclass(frozen=True)
class SceneLabel:
    """Which entities are in the room and on which grid cell."""

    person: Optional[Cell] = None
    robot: Optional[Cell] = None

    def __post_init__(self):
        if self.person is not None:
            object.__setattr__(self, "person", (int(self.person[0]), int(self.person[1])))
        if self.robot is not None:
            object.__setattr__(self, "robot", (int(self.robot[0]), int(self.robot[1])))

    @property
    def person_present(self) -> bool:
        return self.person is not None

    @property
    def robot_present(self) -> bool:
        return self.robot is not None

    def validate(self):
        if self.person is not None:
            check_cell(self.person, "person cell")
        if self.robot is not None:
            check_cell(self.robot, "robot cell")

    def entities(self):
        """(name, cell) for each present entity."""
        if self.person is not None:
            yield "person", self.person
        if self.robot is not None:
            yield "robot", self.robot


@dataclass
class CsiSample:
    x5g: np.ndarray
    xwifi: np.ndarray
    label: SceneLabel

    def __post_init__(self):
        self.x5g = np.asarray(self.x5g, dtype=np.float64)
        self.xwifi = np.asarray(self.xwifi, dtype=np.float64)
