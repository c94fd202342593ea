import time

import numpy as np
import pytest

from magray.geometry import ConformalSurface, ForceField, ModeField

TWO_PI = 2 * np.pi


def modes(*entries):
    return ModeField.from_list(list(entries), TWO_PI, TWO_PI)


def random_modes(rng, kmax=2, amplitude=0.05, constant=0.0):
    """Small random real trigonometric field as a mode list."""
    out = [{"re": constant}] if constant else []
    for kx in range(0, kmax + 1):
        for ky in range(-kmax, kmax + 1):
            if (kx, ky) <= (0, 0):
                continue
            out.append({"kx": kx, "ky": ky, "re": amplitude * rng.standard_normal(),
                        "im": amplitude * rng.standard_normal()})
    return ModeField.from_list(out, TWO_PI, TWO_PI)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def flat16():
    return ConformalSurface.flat(N=16)


@pytest.fixture
def curved():
    """Mildly curved 32 x 32 torus."""
    return ConformalSurface(TWO_PI, TWO_PI, 32, 32, modes({"kx": 1, "re": 0.05}, {"ky": 1, "im": 0.03}))


@pytest.fixture
def exact_field(curved):
    return ForceField.exact(curved, modes({"ky": 1, "re": 0.1}), modes({"kx": 1, "ky": 1, "re": 0.05}))


@pytest.fixture
def magnetic_field(curved):
    return ForceField.magnetic(curved, modes({"re": 0.4}, {"kx": 1, "ky": -1, "re": 0.1}))


# -- acceptance reporting ----------------------------------------------------

class _Criterion:
    def __init__(self, config, number, title, budget):
        self.config, self.number, self.title, self.budget = config, number, title, budget
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = exc_type is None
        line = (f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}  "
                f"[{elapsed:.1f} s / budget {self.budget:.0f} s]  {self.detail}")
        print(line)
        self.config.stash.setdefault(_KEY, []).append(line)
        return False


_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    def make(number, title, budget):
        return _Criterion(request.config, number, title, budget)
    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
