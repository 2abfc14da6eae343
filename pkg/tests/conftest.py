"""Shared fixtures: a synthetic CIFAR-format directory and thread pinning.

The synthetic corpus mimics the real binary layout exactly (five train files
plus a test file of 3,073-byte records) with class-dependent image content,
so every pipeline stage — parsing, subset selection, augmentation,
normalization, training — runs unmodified. Per-class counts are deliberately
unbalanced so all three subsets can be built from one corpus.
"""

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

# original label -> record count. cat/dog carry the Cifar2 quota, the three
# extra Cifar5 classes the next tier, everything else the Cifar10 minimum.
TRAIN_COUNTS = {0: 500, 1: 500, 2: 500, 3: 2500, 4: 1000,
                5: 2500, 6: 1000, 7: 1000, 8: 500, 9: 500}
TEST_COUNTS = {0: 100, 1: 100, 2: 100, 3: 500, 4: 200,
               5: 500, 6: 200, 7: 200, 8: 100, 9: 100}


def synthetic_records(counts: dict[int, int], rng: np.random.Generator):
    """Deterministic labeled images: class-keyed color + grating + noise."""
    labels = np.repeat(np.arange(10, dtype=np.uint8),
                       [counts[c] for c in range(10)])
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:32, 0:32]
    images = np.empty((labels.size, 3, 32, 32), dtype=np.uint8)
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        base = np.array([40.0 + 18 * c, 230.0 - 20 * c, 60.0 + 13 * ((3 * c) % 10)])
        wave = (20.0 * np.sin(2 * np.pi * (c + 1) * xx / 32.0 + c)
                + 20.0 * np.cos(2 * np.pi * ((c % 3) + 1) * yy / 32.0))
        clean = base[:, None, None] + wave[None, :, :]
        noise = rng.normal(0.0, 12.0, size=(idx.size, 3, 32, 32))
        images[idx] = np.clip(clean[None] + noise, 0.0, 255.0).astype(np.uint8)
    return labels, images


def write_cifar_bin(path, labels: np.ndarray, images: np.ndarray) -> None:
    rec = np.empty((labels.size, 3073), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images.reshape(labels.size, -1)
    with open(path, "wb") as f:
        f.write(rec.tobytes())


@pytest.fixture(scope="session")
def cifar_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cifar")
    rng = np.random.default_rng(20240817)
    labels, images = synthetic_records(TRAIN_COUNTS, rng)
    per_file = labels.size // 5
    for i in range(5):
        sl = slice(i * per_file, (i + 1) * per_file)
        write_cifar_bin(root / f"data_batch_{i + 1}.bin", labels[sl], images[sl])
    labels, images = synthetic_records(TEST_COUNTS, rng)
    write_cifar_bin(root / "test_batch.bin", labels, images)
    return str(root)


@pytest.fixture(scope="session")
def cifar_records(cifar_dir):
    from resnextkit import data

    return data.load_cifar_dir(cifar_dir)


@pytest.fixture(scope="session")
def cifar2_dataset(cifar_records):
    from resnextkit import data

    return data.build_subset(*cifar_records, data.SUBSET_SPECS["cifar2"])


@pytest.fixture(scope="session", autouse=True)
def _single_blas_thread():
    with threadpool_limits(limits=1):
        yield


# ---- acceptance reporting: one verdict line per criterion test ----

_acceptance: dict[str, tuple[str, str]] = {}


def _skip_reason(report) -> str:
    if isinstance(report.longrepr, tuple):
        return report.longrepr[2].removeprefix("Skipped: ")
    return ""


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "setup" and report.skipped:
        _acceptance[name] = ("SKIP", _skip_reason(report))
    elif report.when == "call":
        if hasattr(report, "wasxfail"):
            _acceptance[name] = ("XFAIL" if report.skipped else "XPASS", "")
        elif report.skipped:
            _acceptance[name] = ("SKIP", _skip_reason(report))
        else:
            _acceptance[name] = ("PASS" if report.passed else "FAIL", "")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        verdict, extra = _acceptance[name]
        line = f"[{verdict}] {name}"
        if extra:
            line += f"  ({extra})"
        terminalreporter.write_line(line)
