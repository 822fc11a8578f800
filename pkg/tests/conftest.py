import numpy as np
import pytest

from flowlab.fields import Box, make_field


@pytest.fixture(scope="session")
def saddle2d():
    return make_field("linear", [1.0, 0.0, 0.0, -1.0])


@pytest.fixture(scope="session")
def rotation():
    return make_field("rotation")


@pytest.fixture(scope="session")
def lorenz():
    return make_field("lorenz", (10.0, 28.0, 8.0 / 3.0))


@pytest.fixture(scope="session")
def saddle_susp():
    return make_field("saddle_suspension", (1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def diag3():
    # -3, -1 normal rates along the x3-axis orbit; 2 along the flow
    return make_field("linear", [-3, 0, 0, 0, -1, 0, 0, 0, 2],
                      domain=Box(np.full(3, -1e6), np.full(3, 1e6)))


@pytest.fixture(scope="session")
def diag_mixed():
    # -2, -0.5 normal rates, 1 along the flow; wide box for long sweeps
    return make_field("linear", [-2, 0, 0, 0, -0.5, 0, 0, 0, 1],
                      domain=Box(np.full(3, -1e9), np.full(3, 1e9)))


@pytest.fixture(scope="session")
def lorenz_attractor_point(lorenz):
    from flowlab.fields import flow_points
    return flow_points(lorenz, np.array([1.0, 1.0, 1.0]), [30.0], 1e-10)[0]
