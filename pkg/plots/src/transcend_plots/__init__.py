"""Figure reproduction for transcend-lab experiment reports.

Reads only the versioned report CSV contract and renders the four figure
analogs (coverage, temperature, alpha, and two-hop sweeps) as image files.
"""

__version__ = "0.1.0"
