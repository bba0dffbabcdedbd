"""healthgate: agent-mediated, field-level access control for health records."""

__version__ = "0.1.0"
