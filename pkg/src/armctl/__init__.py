"""Robot-agnostic compliant torque control with a built-in simulator."""

from importlib import resources

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path to a bundled URDF fixture, e.g. fixture_path('planar2.urdf')."""
    if not name.endswith(".urdf"):
        name += ".urdf"
    return resources.files(__package__) / "fixtures" / name


def load_fixture(name: str):
    """Parse a bundled URDF fixture into a RobotModel."""
    from .urdf import parse_urdf

    return parse_urdf(fixture_path(name).read_text())
