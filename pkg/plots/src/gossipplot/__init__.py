"""Render overlay figures from gossip-run CSV logs.

Consumes the run-log CSV format produced by the simulator: one header
row naming fifteen columns, one row per outer round.  The coupling is
the file format alone; this package never imports the simulator.
"""

from .schema import CSV_COLUMNS, X_AXES, SchemaError, PlotError, load_table
from .render import PlotSpec, render

__version__ = "0.1.0"
