import numpy as np
from hypothesis import strategies as st

from orchsim.core import SeqItem


@st.composite
def item_lists(draw, max_d=4, max_n=12, max_len=50, min_n=0):
    d = draw(st.integers(1, max_d))
    lengths = draw(st.lists(st.integers(1, max_len), min_size=min_n, max_size=max_n))
    origins = draw(st.lists(st.integers(0, d - 1), min_size=len(lengths), max_size=len(lengths)))
    items = [SeqItem(k, "x", x, o) for k, (x, o) in enumerate(zip(lengths, origins))]
    return d, items


def rng_from(seed):
    return np.random.default_rng(seed)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
