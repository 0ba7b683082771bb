import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mixcorr import SystemParams

# Headline operating point used throughout the suite: T1 = 0.45 ns and a
# drive of 0.56*pi rad/ns, weak enough that the emission is coherent-fraction
# dominated but strong enough to resolve Rabi oscillations.
T1 = 0.45
OMEGA_WEAK = 0.56 * np.pi
OMEGA_STRONG = 3.3 * np.pi


@pytest.fixture
def params_weak():
    return SystemParams(rabi_frequency=OMEGA_WEAK, lifetime=T1)


@pytest.fixture
def params_strong():
    return SystemParams(rabi_frequency=OMEGA_STRONG, lifetime=T1)


@pytest.fixture
def params_dephased():
    return SystemParams(
        rabi_frequency=OMEGA_WEAK, lifetime=T1, pure_dephasing_rate=0.8
    )
