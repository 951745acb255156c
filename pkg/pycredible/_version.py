# Bump the version here only (setup.py and the emitted C headers read it)
__version__ = '1.0'
