import pytest

from hubsim.attachment import AttachmentFunction


@pytest.fixture(scope="session")
def pa():
    """f(k) = k + 1."""
    return AttachmentFunction.affine(1.0)


@pytest.fixture(scope="session")
def p3():
    """f(k) = (k + 1)^0.3."""
    return AttachmentFunction.power(0.3)


@pytest.fixture(scope="session")
def uniform():
    return AttachmentFunction.constant(1.0)
