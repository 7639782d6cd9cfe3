"""Document shadow removal with an Otsu-prior detector and a cascaded transformer refiner."""

__version__ = "0.1.0"
