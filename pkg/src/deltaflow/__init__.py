"""Probabilistic forecasting of the four quarter-hourly intraday minus day-ahead price differences."""

from .dataset import MarketDataset, SynthConfig, generate_synthetic, load_dataset_dir
from .errors import DeltaFlowError

__all__ = ["DeltaFlowError", "MarketDataset", "SynthConfig", "generate_synthetic", "load_dataset_dir"]
__version__ = "0.1.0"
