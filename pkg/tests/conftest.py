import json
import random
import shutil
import subprocess
from pathlib import Path

import pytest

from tmisauth.primitives import DEFAULT_SUITE
from tmisauth.scheme import ServerState, register_user
from tmisauth.simnet import AdversaryKnowledge, Channel, SimClock, User, adversary_register

REFERENCE_JS = Path(__file__).parent / "reference" / "primitives_ref.js"


def run_reference(cases):
    """Evaluate primitive cases with the Node.js reference implementation."""
    node = shutil.which("node")
    if node is None:
        pytest.skip("node is not installed")
    proc = subprocess.run([node, str(REFERENCE_JS)], input=json.dumps(cases),
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


class World:
    """A server, some registered users and an adversary on one channel."""

    def __init__(self, seed=0, n_users=2, window=60):
        self.rng = random.Random(seed)
        self.server = ServerState.generate(self.rng, DEFAULT_SUITE, window)
        self.users = {}
        for i in range(n_users):
            uid = f"user{i:02d}"
            creds, card = register_user(self.server, uid, f"pw-{uid}-{self.rng.randrange(10**6)}",
                                        self.rng)
            self.users[uid] = User(creds, card)
        self.know = AdversaryKnowledge(DEFAULT_SUITE)
        self.adversary = adversary_register(self.server, "mallory", "m4ll0ry", self.rng, self.know)
        self.channel = Channel()
        self.clock = SimClock()

    def user(self, i=0):
        return list(self.users.values())[i]


@pytest.fixture
def world():
    return World()


@pytest.fixture
def make_world():
    return World


# -- acceptance summary ------------------------------------------------------

_acceptance_results = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _acceptance_results.append((marker.args[0], marker.args[1], status))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status in sorted(_acceptance_results):
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")
