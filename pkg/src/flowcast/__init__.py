"""flowcast: desk-scale multimodal time-series forecasting with
prototype-guided conditional flow matching."""

__version__ = "0.1.0"
