"""Very long scenery outpainting with an encoder / recurrent-transfer / decoder GAN."""

__version__ = "0.1.0"
