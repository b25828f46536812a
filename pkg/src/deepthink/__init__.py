"""Weight-shared recurrent networks that extrapolate by thinking longer."""

__version__ = "0.1.0"
