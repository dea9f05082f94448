"""Configuration package"""
from .config import (
    CHECKPOINT_VERSION,
    FbacConfig,
    FBNetConfig,
    HGNetConfig,
    LoggingConfig,
    MetricConfig,
    PathConfig,
    TrainConfig,
    load_train_config,
)

__all__ = [
    'CHECKPOINT_VERSION',
    'FbacConfig',
    'FBNetConfig',
    'HGNetConfig',
    'LoggingConfig',
    'MetricConfig',
    'PathConfig',
    'TrainConfig',
    'load_train_config',
]
