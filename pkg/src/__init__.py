# PFML Indoor Localization
__version__ = "1.0.0"
