from dataclasses import replace

import numpy as np
import pytest

from bcg.synth import SynthParams, bedding_down_params, generate_bcg
from bcg.types import SensorChannel
from bcg.vitals import PeakThreshold, calibrate_bands

VITALS_CH = SensorChannel.parse("LIS3DHH:X")
CAL_EMPTY_S = 30
CAL_TOTAL_S = 150


def bedding_down_thresholds(params: SynthParams, seed: int) -> dict[str, PeakThreshold]:
    """Peak thresholds from a separate empty-then-occupied recording of the same setup."""
    cal_params = bedding_down_params(replace(params, seed=seed), CAL_EMPTY_S, CAL_TOTAL_S)
    return calibrate_bands(generate_bcg(cal_params, CAL_TOTAL_S)[VITALS_CH])


def rates(estimates, attr):
    return np.array([np.nan if getattr(e, attr) is None else getattr(e, attr) for e in estimates])


@pytest.fixture(scope="session")
def calibration_70():
    return bedding_down_thresholds(SynthParams(heart_rate_bpm=70, resp_rate_bpm=15), seed=1000)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
