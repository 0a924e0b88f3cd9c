import json
import os
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv
from pydantic import ValidationError

from src.backbone import BackboneConfig
from src.errors import ConfigurationError
from src.hgd_decoder import HGDConfig
from src.training import TrainConfig

SECTIONS = ("backbone", "hgd", "train")

# environment variable -> (section, key, parser)
ENV_OVERRIDES = {
    "EFCN_SEED": ("train", "seed", int),
    "EFCN_MAX_ITERS": ("train", "max_iters", int),
    "EFCN_BASE_LR": ("train", "base_lr", float),
}


class ConfigManager:
    """
    Manages reading, writing, and resolving the run configuration JSON file.

    It assumes the config file follows the structure:
    {"backbone": {BackboneConfig fields}, "hgd": {HGDConfig fields}, "train": {TrainConfig fields}}

    Values resolve as CLI overrides > environment variables > file values > model defaults.
    """

    def __init__(self, file_path: Optional[str] = None, quiet: bool = False):
        """
        Initializes the manager and loads the configuration file when one is given.

        Args:
            file_path: The full path to the configuration JSON file, or None for defaults only.
            quiet: Suppress progress messages.
        """
        self.file_path = file_path
        self.quiet = quiet
        self.config_data: Dict[str, Dict[str, Any]] = {section: {} for section in SECTIONS}
        self.loaded = False
        if file_path:
            self.loaded = self.load_config()

    def _say(self, message: str) -> None:
        if not self.quiet:
            print(message)

    def load_config(self) -> bool:
        """
        Loads the configuration data from the JSON file into memory.

        Returns:
            True if the configuration was loaded successfully, False otherwise.
        """
        try:
            with open(self.file_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            print(f"❌ Configuration file not found at {self.file_path}")
            return False
        except json.JSONDecodeError as e:
            print(f"❌ Failed to decode JSON from {self.file_path}: {e.msg} (line {e.lineno})")
            return False
        if not isinstance(data, dict):
            print(f"❌ Configuration in {self.file_path} must be a JSON object")
            return False
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            print(f"⚠️ Ignoring unknown configuration sections: {', '.join(unknown)}")
        for section in SECTIONS:
            self.config_data[section] = dict(data.get(section) or {})
        self._say(f"✅ Configuration loaded successfully from: {self.file_path}")
        return True

    def save_config(self, file_path: Optional[str] = None) -> bool:
        """
        Writes the current in-memory configuration data back to the JSON file.

        Returns:
            True if the configuration was saved successfully, False otherwise.
        """
        target = file_path or self.file_path
        if not target:
            print("❌ No configuration file path to save to")
            return False
        try:
            dir_name = os.path.dirname(target)
            if dir_name and not os.path.exists(dir_name):
                os.makedirs(dir_name)
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(self.config_data, f, indent=2)
            self._say(f"💾 Configuration saved successfully to: {target}")
            return True
        except OSError as e:
            print(f"❌ Error saving configuration to {target}: {e}")
            return False

    def get_section(self, section: str) -> Dict[str, Any]:
        if section not in SECTIONS:
            raise ConfigurationError(f"Unknown configuration section '{section}' (expected {', '.join(SECTIONS)})")
        return self.config_data[section]

    def update_value(self, section: str, key: str, value: Any) -> bool:
        """
        Updates a single key-value pair of one section in memory.

        The change must be explicitly saved using save_config() to persist it.
        """
        self.get_section(section)[key] = value
        self._say(f"Updated: [{section}][{key}] set to '{value}' (in memory)")
        return True

    @staticmethod
    def environment_overrides() -> Dict[str, Dict[str, Any]]:
        """
        Reads EFCN_* overrides from the environment (after loading a .env file).

        Raises:
            ConfigurationError: if a variable does not parse.
        """
        load_dotenv()
        overrides: Dict[str, Dict[str, Any]] = {section: {} for section in SECTIONS}
        for variable, (section, key, parser) in ENV_OVERRIDES.items():
            raw = os.getenv(variable)
            if raw is None or raw == "":
                continue
            try:
                overrides[section][key] = parser(raw)
            except ValueError as e:
                raise ConfigurationError(f"Environment variable {variable}={raw!r} is invalid: {e}") from e
        return overrides

    def resolve(self, cli_overrides: Optional[Dict[str, Dict[str, Any]]] = None,
                use_environment: bool = True) -> Tuple[BackboneConfig, HGDConfig, TrainConfig]:
        """
        Builds validated configuration models.

        Args:
            cli_overrides: {section: {key: value}} from command-line flags; None values are skipped.
            use_environment: Apply EFCN_* environment overrides.

        Raises:
            ConfigurationError: if any resolved section fails validation.
        """
        merged = {section: dict(self.config_data[section]) for section in SECTIONS}
        layers = [self.environment_overrides()] if use_environment else []
        layers.append(cli_overrides or {})
        for layer in layers:
            for section, values in layer.items():
                merged[section].update({k: v for k, v in values.items() if v is not None})
        try:
            return (BackboneConfig(**merged["backbone"]), HGDConfig(**merged["hgd"]),
                    TrainConfig(**merged["train"]))
        except ValidationError as e:
            raise ConfigurationError(f"Invalid configuration: {e}") from e
