"""Built-in systems with their default sampling boxes and run settings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .model import BoxRegion, LftSystem


@dataclass(frozen=True)
class SystemSpec:
    """Nominal linear part, a nonlinearity oracle and default run settings.

    ``nominal`` has no nonlinearity channels; they are inferred from samples.
    """

    name: str
    nominal: LftSystem
    oracle: Callable[[np.ndarray, np.ndarray], np.ndarray]
    X: BoxRegion
    U: BoxRegion
    grid: Tuple[int, ...]
    r_grid: Tuple[float, ...]
    constrain_input: str = "auto"
    n_max: int = 20
    x_init: Optional[np.ndarray] = None
    description: str = ""


def _nominal(A, B1) -> LftSystem:
    A = np.asarray(A, dtype=float)
    B1 = np.asarray(B1, dtype=float)
    nx, nu = B1.shape
    return LftSystem(A, B1, np.zeros((nx, 0)), (), ())


def quadratic_example() -> SystemSpec:
    """Two states, one input, quadratic cross terms in state and input."""

    def oracle(dx, du):
        x1, x2 = dx
        u = du[0]
        return np.array([-x1 * x2 + u * u, x1 * x1 - u * u])

    return SystemSpec(
        name="example1",
        nominal=_nominal([[-0.1, 1.0], [0.0, -0.1]], [[1.0], [1.0]]),
        oracle=oracle,
        X=BoxRegion.symmetric([0.75, 0.75]),
        U=BoxRegion.symmetric([0.55]),
        grid=(31, 31, 31),
        r_grid=tuple(np.linspace(0.01, 0.5, 11)),
        constrain_input="auto",
        n_max=20,
        description="quadratic nonlinearity, input enters Delta",
    )


def pendulum_example(g: float = 9.8, length: float = 1.0, mu: float = 0.01) -> SystemSpec:
    """Inverted pendulum about the upright position; the nonlinearity is ``g/l (sin x1 - x1)``."""

    def oracle(dx, du):
        return np.array([0.0, g / length * (np.sin(dx[0]) - dx[0])])

    return SystemSpec(
        name="example2",
        nominal=_nominal([[0.0, 1.0], [g / length, -mu]], [[0.0], [1.0]]),
        oracle=oracle,
        X=BoxRegion.symmetric([1.5, 1.5]),
        U=BoxRegion.symmetric([30.0]),
        grid=(101, 101, 3),
        r_grid=(30.0,),
        constrain_input="off",
        n_max=20,
        x_init=np.array([1.4, 0.0]),
        description="inverted pendulum, matched sine nonlinearity, input unconstrained",
    )


def linear_example() -> SystemSpec:
    """Stable linear plant with an identically zero nonlinearity."""

    def oracle(dx, du):
        return np.zeros(2)

    return SystemSpec(
        name="linear",
        nominal=_nominal([[-1.0, 0.5], [0.0, -2.0]], [[0.0], [1.0]]),
        oracle=oracle,
        X=BoxRegion.symmetric([1.0, 1.0]),
        U=BoxRegion.symmetric([1.0]),
        grid=(5, 5, 5),
        r_grid=(0.5,),
        constrain_input="auto",
        n_max=5,
        description="stable linear plant, Delta = 0",
    )


BUILTIN: Dict[str, Callable[[], SystemSpec]] = {
    "example1": quadratic_example,
    "example2": pendulum_example,
    "linear": linear_example,
}


def get_system(name: str) -> SystemSpec:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown system {name!r}; built-in systems are {sorted(BUILTIN)}") from None


def parse_r_grid(text: str) -> Sequence[float]:
    """``start:stop:count`` (inclusive, evenly spaced) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"r-grid must be start:stop:count, got {text!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("r-grid count must be positive")
        return list(np.linspace(start, stop, count))
    return [float(p) for p in text.split(",") if p.strip()]
