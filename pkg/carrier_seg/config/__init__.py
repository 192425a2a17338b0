"""
Configuration management for carrier-seg.

This module handles loading, validation, and management of run settings.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import dotenv_values

from ..carrier_sim import SimParams, STABILITY_BOUND
from ..exceptions import CarrierSegError, ConfigurationError
from ..pgm_io import ImageKind

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Configuration data class for one pipeline run."""

    # Image source: exactly one of these
    input_path: Optional[str] = None
    gen_kind: Optional[str] = None
    gen_width: int = 64
    gen_height: int = 64

    output_dir: str = "out"

    # Simulation settings with defaults
    k1: float = 0.05
    k2: float = 0.2
    epsilon: float = 1e-6
    max_iters: int = 100000
    zero_tol: float = 0.0
    snapshot_iters: List[int] = field(default_factory=list)
    target_regions: Optional[int] = None
    workers: int = 1

    # Logging
    log_path: Optional[str] = None
    verbose: bool = False

    # Configuration source information
    config_source: str = "defaults"

    def validate(self) -> None:
        """
        Validate configuration values.

        Raises:
            ConfigurationError: If configuration is invalid
        """
        if (self.input_path is None) == (self.gen_kind is None):
            raise ConfigurationError("exactly one of --input or --gen must be given")

        if self.gen_kind is not None:
            try:
                ImageKind.parse(self.gen_kind)
            except CarrierSegError as e:
                raise ConfigurationError(str(e))
            if self.gen_width < 1 or self.gen_height < 1:
                raise ConfigurationError(
                    f"generated image size must be positive, got {self.gen_width}x{self.gen_height}")

        if self.target_regions is not None and self.target_regions < 1:
            raise ConfigurationError(f"target_regions must be at least 1, got {self.target_regions}")

        # Same bounds as the simulation itself
        self.to_sim_params()
        logger.debug("Configuration validation passed")

    def to_sim_params(self) -> SimParams:
        """Build simulation parameters; raises ConfigurationError on bad values."""
        return SimParams(
            k1=self.k1, k2=self.k2, epsilon=self.epsilon, max_iters=self.max_iters,
            snapshot_iters=tuple(self.snapshot_iters), zero_tol=self.zero_tol,
            workers=self.workers)

    @property
    def source_label(self) -> str:
        if self.input_path is not None:
            return self.input_path
        return f"{ImageKind.parse(self.gen_kind).value} {self.gen_width}x{self.gen_height}"

    def as_manifest(self) -> List[Tuple[str, Any]]:
        """Parameters in manifest order."""
        return [
            ('input', self.input_path or ''),
            ('gen', ImageKind.parse(self.gen_kind).value if self.gen_kind else ''),
            ('gen_size', f"{self.gen_width}x{self.gen_height}" if self.gen_kind else ''),
            ('k1', repr(float(self.k1))),
            ('k2', repr(float(self.k2))),
            ('epsilon', repr(float(self.epsilon))),
            ('max_iters', self.max_iters),
            ('zero_tol', repr(float(self.zero_tol))),
            ('snapshots', ','.join(str(n) for n in self.snapshot_iters)),
            ('target_regions', self.target_regions if self.target_regions is not None else ''),
        ]


class ConfigurationLoader:
    """Loads parameter defaults from the environment and config files."""

    CONFIG_FILE_NAME = '.carrierseg'

    # Setting key -> (attribute, converter)
    SETTINGS = {
        'K1': ('k1', float),
        'K2': ('k2', float),
        'EPSILON': ('epsilon', float),
        'MAX_ITERS': ('max_iters', int),
        'ZERO_TOL': ('zero_tol', float),
        'WORKERS': ('workers', int),
        'LOG_PATH': ('log_path', str),
    }
    ENV_PREFIX = 'CARRIER_SEG_'

    def load_overrides(self, config_path: Optional[str] = None) -> Tuple[Dict[str, Any], str]:
        """
        Load settings from all available sources.

        Configuration priority (highest to lowest):
        1. Command-line arguments (handled by caller)
        2. Configuration file (--config path, else ./.carrierseg)
        3. Environment variables (CARRIER_SEG_*)

        Args:
            config_path: Optional path to specific config file

        Returns:
            (RunConfig keyword overrides, description of the sources used)

        Raises:
            ConfigurationError: If a file is missing or a value is malformed
        """
        overrides: Dict[str, Any] = {}
        sources = []

        env_config = self._load_from_environment()
        if env_config:
            overrides.update(self._convert(env_config, 'environment'))
            sources.append("environment")
            logger.debug(f"Loaded configuration from environment: {', '.join(env_config)}")

        config_file = self._find_config_file(config_path)
        if config_file is not None:
            file_config = self._load_from_file(config_file)
            overrides.update(self._convert(file_config, str(config_file)))
            sources.append(f"file ({config_file})")
            logger.debug(f"Loaded configuration from file: {config_file}")

        if sources:
            logger.info(f"Configuration loaded from: {' -> '.join(sources)}")
        return overrides, ' -> '.join(sources) if sources else 'defaults'

    def _load_from_environment(self) -> Dict[str, str]:
        config = {}
        for key in self.SETTINGS:
            value = os.environ.get(self.ENV_PREFIX + key)
            if value:
                config[key] = value
        return config

    def _find_config_file(self, config_path: Optional[str]) -> Optional[Path]:
        if config_path:
            config_file = Path(config_path)
            if not config_file.is_file():
                raise ConfigurationError(f"Config file not found: {config_path}")
            return config_file

        local = Path.cwd() / self.CONFIG_FILE_NAME
        return local if local.is_file() else None

    def _load_from_file(self, config_file: Path) -> Dict[str, str]:
        """Read KEY=VALUE settings; keys may carry the CARRIER_SEG_ prefix."""
        try:
            raw = dotenv_values(config_file)
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigurationError(f"Failed to load configuration from {config_file}: {e}")

        config = {}
        for key, value in raw.items():
            name = key.upper()
            if name.startswith(self.ENV_PREFIX):
                name = name[len(self.ENV_PREFIX):]
            if name not in self.SETTINGS:
                logger.warning(f"Ignoring unknown setting {key} in {config_file}")
                continue
            if value is not None and value != '':
                config[name] = value
        return config

    def _convert(self, config: Dict[str, str], source: str) -> Dict[str, Any]:
        converted = {}
        for key, value in config.items():
            attribute, converter = self.SETTINGS[key]
            try:
                converted[attribute] = converter(value)
            except ValueError:
                raise ConfigurationError(f"Invalid value for {key} in {source}: {value!r}")
        return converted


def check_parameter_hints(config: RunConfig) -> None:
    """Log warnings for legal but unusual settings."""
    if config.k2 > 0.9 * STABILITY_BOUND:
        logger.warning(f"k2={config.k2} is close to the stability bound {STABILITY_BOUND}; "
                       "convergence will oscillate before settling")
    if config.zero_tol > 0 and config.zero_tol >= config.k1:
        logger.warning(f"zero_tol={config.zero_tol} is not small against k1={config.k1}; "
                       "most pixels may be classified as zero")
