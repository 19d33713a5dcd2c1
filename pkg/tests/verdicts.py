"""Shared store for acceptance verdict lines, printed in the terminal summary."""

LINES: list[str] = []
