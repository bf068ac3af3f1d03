import numpy as np
import pytest

from monostixels.core import CameraRig, FrameMotion


@pytest.fixture
def rig():
    # f=400, principal point (320, 240), level camera 1.65 m above ground
    return CameraRig.simple(400.0, 320.0, 240.0, 640, 480, cam_height=1.65)


@pytest.fixture
def forward():
    return FrameMotion(np.eye(3), np.array([0.0, 0.0, 1.0]))
