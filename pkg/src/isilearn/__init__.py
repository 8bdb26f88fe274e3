"""End-to-end learned FIR pulse shaping and receive filtering for 4-PAM IM/DD links."""

__version__ = "0.1.0"
