"""Double forms, Bianchi symmetries and corrected elliptic chains."""

__version__ = "0.1.0"
