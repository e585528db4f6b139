"""Identity-based proxy re-encryption schemes (selective and adaptive)."""
