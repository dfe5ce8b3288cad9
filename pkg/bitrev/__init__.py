"""bitrev - bitstream reverse engineering and manipulation on a synthetic FPGA fabric."""

__version__ = "1.0.0"
