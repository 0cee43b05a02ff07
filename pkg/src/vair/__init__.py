"""Visuo-acoustic reconstruction of transparent surfaces from depth clouds, glass masks and range pings."""
__version__ = "0.1.0"
