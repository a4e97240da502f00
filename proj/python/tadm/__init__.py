"""Python bindings for the tadm extreme image rescaling library.

Images are HxWx3 ``uint8`` numpy arrays. Configuration is passed as plain
dicts using the same dotted-key tree as the ``tadm`` command-line tool.
"""

import json

import torch  # noqa: F401  loads libtorch before the extension module

from ._tadm import ConfigError, Model, describe_config, psnr, run_cli, ssim, synthesize_corpus, version
from ._tadm import default_config_json as _default_config_json

__all__ = [
    "ConfigError",
    "Model",
    "build_model",
    "default_config",
    "describe_config",
    "load_model",
    "psnr",
    "run_cli",
    "ssim",
    "synthesize_corpus",
    "version",
]


def default_config():
    return json.loads(_default_config_json())


def build_model(overrides=None):
    """Untrained model from the default config with ``overrides`` merged in."""
    return Model.build(json.dumps(overrides or {}))


def load_model(path):
    return Model.load(str(path))
