import numpy as np
import pytest
import torch

from bitmol.molgraph import Atom, Bond, BondOrder, Domain, GenConfig, MolecularGraph, synth_generate

torch.set_num_threads(1)


def make_graph(elements, bonds, coords=None, domain=Domain.MOLECULE):
    coords = [None] * len(elements) if coords is None else [tuple(map(float, c)) for c in coords]
    atoms = [Atom(int(z), c) for z, c in zip(elements, coords)]
    return MolecularGraph(atoms, [Bond(i, j, BondOrder(o)) for i, j, o in bonds], domain)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="session")
def small_corpus():
    return synth_generate(3, GenConfig(n_molecules=6, n_pockets=4, n_complexes=4))


# acceptance criteria report one line each at the end of the session
_CRITERIA: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    number, title = mark.args
    _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, secs = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}  ({secs:.1f} s)")
