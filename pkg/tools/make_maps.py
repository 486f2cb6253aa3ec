"""Regenerate the bundled truth maps and scenario files in src/explora/maps."""

from pathlib import Path

import numpy as np

from explora.grid_map import CellState, OccupancyGrid, save_map

RES = 0.1
OUT = Path(__file__).resolve().parents[1] / "src" / "explora" / "maps"


class Canvas:
    def __init__(self, w, h, wall=0.2):
        self.cells = np.full((round(h / RES), round(w / RES)), CellState.FREE, dtype=np.int8)
        self.w, self.h = w, h
        self.box(0, 0, w, h, wall)

    def _idx(self, x0, y0, x1, y1):
        return slice(round(y0 / RES), round(y1 / RES)), slice(round(x0 / RES), round(x1 / RES))

    def wall(self, x0, y0, x1, y1):
        self.cells[self._idx(x0, y0, x1, y1)] = CellState.OCCUPIED

    def hole(self, x0, y0, x1, y1):
        self.cells[self._idx(x0, y0, x1, y1)] = CellState.FREE

    def box(self, x0, y0, x1, y1, t=0.2):
        self.wall(x0, y0, x1, y0 + t)
        self.wall(x0, y1 - t, x1, y1)
        self.wall(x0, y0, x0 + t, y1)
        self.wall(x1 - t, y0, x1, y1)

    def grid(self):
        return OccupancyGrid(self.cells, RES, (0.0, 0.0))


def empty_room():
    return Canvas(6.0, 5.0)


def corridor():
    # serpentine corridor, three legs joined by 180-degree bends
    c = Canvas(14.0, 5.4)
    c.wall(0, 1.8, 12.2, 2.0)
    c.wall(1.8, 3.6, 14.0, 3.8)
    return c


def office():
    # office floor: a long corridor with side rooms behind doors
    c = Canvas(16.0, 7.0)
    c.wall(0, 2.6, 16, 2.8)
    c.wall(0, 4.2, 16, 4.4)
    for x in (4.0, 8.0, 12.0):
        c.wall(x, 0, x + 0.2, 2.7)
        c.wall(x, 4.3, x + 0.2, 7.0)
    for x in (1.5, 5.5, 9.5, 13.5):
        c.hole(x, 2.6, x + 1.0, 2.8)
        c.hole(x, 4.2, x + 1.0, 4.4)
    return c


def challenge_a():
    c = Canvas(12.0, 9.0)
    c.wall(6.0, 0, 6.2, 9.0)
    c.hole(6.0, 1.0, 6.2, 2.0)
    c.hole(6.0, 6.5, 6.2, 7.5)
    c.wall(0, 4.5, 4.5, 4.7)
    # trap room seen through a 0.3 m slit
    c.wall(10.0, 4.0, 10.2, 6.0)
    c.wall(10.0, 4.0, 12.0, 4.2)
    c.wall(10.0, 5.8, 12.0, 6.0)
    c.hole(10.0, 4.9, 10.2, 5.2)
    # 0.4 m dead-end slot off the lower-left room
    c.wall(0, 2.6, 3.0, 2.8)
    c.wall(0, 3.2, 3.0, 3.4)
    # obstacles
    c.wall(2.0, 6.5, 2.8, 7.3)
    c.wall(8.0, 2.5, 8.6, 3.1)
    return c


def challenge_b():
    c = Canvas(12.0, 9.0)
    # pillars in an open hall
    for x, y in ((2.5, 2.5), (5.0, 2.5), (2.5, 6.0), (5.0, 6.0)):
        c.wall(x, y, x + 0.5, y + 0.5)
    # east wing separated by a wall with one door and one 0.4 m corridor
    c.wall(7.5, 0, 7.7, 9.0)
    c.hole(7.5, 7.0, 7.7, 8.0)
    c.wall(7.5, 2.8, 9.5, 3.0)
    c.wall(7.5, 3.4, 9.5, 3.6)
    c.hole(7.5, 3.0, 7.7, 3.4)
    c.wall(9.3, 0, 9.5, 3.0)
    c.wall(9.3, 3.4, 9.5, 5.5)
    c.wall(9.5, 5.3, 12.0, 5.5)
    # trap closet with two slits
    c.box(3.0, 0.0, 4.6, 1.4)
    c.hole(3.6, 1.2, 3.9, 1.4)
    c.hole(4.4, 0.5, 4.6, 0.8)
    return c


def challenge_c():
    c = Canvas(12.0, 9.0)
    # serpentine corridors
    c.wall(0, 3.0, 9.5, 3.2)
    c.wall(2.5, 6.0, 12.0, 6.2)
    # 0.3 m shortcut through the lower partition: visible, not passable
    c.hole(5.0, 3.0, 5.3, 3.2)
    # 0.4 m shortcut through the upper partition
    c.hole(7.0, 6.0, 7.4, 6.2)
    # trap closet in the lower band
    c.box(9.8, 0.0, 12.0, 1.8)
    c.hole(10.6, 1.6, 10.9, 1.8)
    c.wall(3.0, 1.0, 3.6, 1.6)
    c.wall(8.0, 4.2, 8.6, 4.8)
    return c


def door():
    # two routes between the west and east rooms; the northern door closes mid-run
    c = Canvas(12.0, 8.0)
    c.wall(4.0, 0, 4.2, 8.0)
    c.wall(8.0, 0, 8.2, 8.0)
    c.wall(4.0, 3.0, 8.2, 5.0)
    c.hole(4.0, 5.8, 4.2, 7.0)
    c.hole(8.0, 5.8, 8.2, 7.0)
    c.hole(4.0, 1.0, 4.2, 2.2)
    c.hole(8.0, 1.0, 8.2, 2.2)
    return c


SCENARIOS = {
    "empty_room": (empty_room, (3.0, 2.5, 0.0), ""),
    "corridor": (corridor, (1.0, 1.0, 0.0), ""),
    "office": (office, (1.0, 3.5, 0.0), ""),
    "challenge_a": (challenge_a, (1.5, 1.2, 0.0), ""),
    "challenge_b": (challenge_b, (1.2, 4.5, 0.0), ""),
    "challenge_c": (challenge_c, (1.0, 1.5, 0.0), ""),
    "door": (door, (2.0, 6.0, 0.0), "edit = 3.0 8.0 5.8 8.2 7.0\n"),
}


def main():
    OUT.mkdir(exist_ok=True)
    for name, (build, (x, y, th), extra) in SCENARIOS.items():
        save_map(build().grid(), OUT / f"{name}.pgm")
        (OUT / f"{name}.cfg").write_text(
            f"# bundled scenario: {name}\n"
            f"map = {name}.pgm\n"
            f"start_x = {x}\nstart_y = {y}\nstart_theta = {th}\n" + extra
        )
        print(name)


if __name__ == "__main__":
    main()
