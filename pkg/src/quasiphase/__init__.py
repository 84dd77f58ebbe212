"""Phase-space distributions of a single bosonic mode and the
quantum-limited amplifier/attenuator channels that connect them."""

__version__ = "0.1.0"
