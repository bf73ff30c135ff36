"""Regional frequency analysis of daily precipitation with PWM clustering and EGPD fits."""

__version__ = "0.1.0"
