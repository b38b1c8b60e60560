"""robocell: an around-the-clock evaluation service for remote robot
manipulation policies, running against simulated robot cells."""

__version__ = "0.1.0"
