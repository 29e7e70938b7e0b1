"""Data-parsimonious short-term solar irradiance forecasting toolkit."""

__version__ = "0.1.0"
