"""Energy rank alignment."""
