import numpy as np
from hypothesis import strategies as st


@st.composite
def probability_vectors(draw, min_size=2, max_size=8):
    size = draw(st.integers(min_size, max_size))
    raw = draw(st.lists(st.floats(1e-6, 1.0), min_size=size, max_size=size))
    p = np.array(raw)
    return p / p.sum()


def random_simplex(rng, size, concentration=1.0):
    return rng.dirichlet(np.full(size, concentration))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
