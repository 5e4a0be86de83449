"""mmwnav: desk-scale mmWave-assisted indoor target navigation simulator."""

__version__ = "0.1.0"
