"""Interval-encoded chorale toolkit.

Thin Python surface over the C++ core: MIDI-to-grid conversion, the
interval codec, and grid rendering. Heavier operations (dataset builds,
training, generation) live in the ``intervalic`` command-line tool.
"""

from ._intervalic import (
    Error,
    decode_grid,
    encode_grid,
    fold_interval,
    grid_to_midi,
    melody_intervals,
    midi_to_grid,
)

__all__ = [
    "Error",
    "decode_grid",
    "encode_grid",
    "fold_interval",
    "grid_to_midi",
    "melody_intervals",
    "midi_to_grid",
]
