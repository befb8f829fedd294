import re
import subprocess

import pytest


@pytest.fixture(scope="session")
def engine_server():
    """A real engine process (mirror method only), port parsed from its banner."""
    proc = subprocess.Popen(
        ["facereact", "serve", "--bind", "127.0.0.1:0", "--stats-every", "2"],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        banner = proc.stdout.readline()
        match = re.search(r"listening on ([\d.]+):(\d+)", banner)
        if not match:
            proc.terminate()
            raise RuntimeError(f"engine did not start: {banner!r}")
        yield {"host": match.group(1), "port": int(match.group(2))}
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
