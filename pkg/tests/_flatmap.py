"""Flat sorted-array model of a piecewise-linear increasing map of [0, 1]."""
from __future__ import annotations

import bisect


class FlatMap:
    def __init__(self):
        self.xs = [0.0, 1.0]  # message-space knots
        self.ys = [0.0, 1.0]  # images

    def query(self, x: float) -> float:
        j = min(max(bisect.bisect_right(self.xs, x) - 1, 0), len(self.xs) - 2)
        x0, x1 = self.xs[j], self.xs[j + 1]
        y0, y1 = self.ys[j], self.ys[j + 1]
        if x1 == x0:
            return y1
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0)

    def _insert_at_image(self, y: float) -> None:
        j = min(max(bisect.bisect_right(self.ys, y) - 1, 0), len(self.ys) - 2)
        y0, y1 = self.ys[j], self.ys[j + 1]
        if y in (y0, y1) or y1 == y0:
            return
        x = self.xs[j] + (self.xs[j + 1] - self.xs[j]) * (y - y0) / (y1 - y0)
        self.xs.insert(j + 1, x)
        self.ys.insert(j + 1, y)

    def rescale(self, breakpoints, factors) -> None:
        """Compose with g: slope factors[k] on segment k between breakpoints."""
        for b in breakpoints:
            self._insert_at_image(b)
        edges = [0.0] + list(breakpoints) + [1.0]
        images = [0.0]
        for k, f in enumerate(factors):
            images.append(images[-1] + f * (edges[k + 1] - edges[k]))

        def g(y):
            k = min(max(bisect.bisect_right(edges, y) - 1, 0), len(factors) - 1)
            return images[k] + factors[k] * (y - edges[k])
        self.ys = [g(y) for y in self.ys]
        self.ys[-1] = images[-1]

    def scale(self, y: float, r: float) -> None:
        self.rescale([y], [r / y, (1 - r) / (1 - y)])
