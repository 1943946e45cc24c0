"""stresseq: Neo-Hookean Taylor-Hood solver with weakly symmetric stress equilibration."""

__version__ = "0.1.0"
