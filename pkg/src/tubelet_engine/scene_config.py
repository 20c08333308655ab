"""
Scene preset management
Loads named synthetic dataset presets from YAML and builds validated DatasetConfigs
"""

import copy
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .engine.config import DatasetConfig
from .errors import FormatError, TubeletEngineError


def merge_settings(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values in overrides win"""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_settings(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _load_yaml(path: Union[str, Path]) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)
    except FileNotFoundError:
        raise FormatError(path, 1, "file not found")
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise FormatError(path, mark.line + 1 if mark else 1, f"invalid YAML: {e}")


class SceneLibrary:
    """Named dataset presets from a YAML file"""

    def __init__(self, config_file: Optional[str] = None):
        """
        Initialize the preset library

        Args:
            config_file: Path to YAML preset file. If None, uses the packaged scenes.yaml
        """
        if config_file is None:
            config_file = os.path.join(os.path.dirname(__file__), "scenes.yaml")

        self.config_file = config_file
        self._config: Dict[str, Any] = {}
        self._load_config()

    def _load_config(self) -> None:
        config = _load_yaml(self.config_file)
        if not isinstance(config, dict):
            raise FormatError(self.config_file, 1, "preset file must be a mapping")
        self._config = config

    def get_presets(self) -> Dict[str, Dict[str, Any]]:
        return self._config.get("presets", {})

    def get_preset(self, name: str) -> Dict[str, Any]:
        """
        Get a preset's dataset settings

        Raises:
            KeyError: If the preset doesn't exist
        """
        presets = self.get_presets()
        if name not in presets:
            raise KeyError(f"Preset '{name}' not found. Available: {list(presets.keys())}")
        return copy.deepcopy(presets[name].get("dataset", {}))

    def get_preset_names(self) -> List[str]:
        return list(self.get_presets().keys())

    def describe(self, name: str) -> str:
        self.get_preset(name)
        return self.get_presets()[name].get("description", "")

    def dataset_config(self, name: str, **overrides: Any) -> DatasetConfig:
        """Validated DatasetConfig of a preset with optional field overrides"""
        return DatasetConfig.model_validate(merge_settings(self.get_preset(name), overrides))

    def get_metadata(self) -> Dict[str, Any]:
        return self._config.get("metadata", {})

    def reload_config(self) -> None:
        self._load_config()


def load_dataset_config(path: Union[str, Path], library: Optional[SceneLibrary] = None) -> DatasetConfig:
    """
    Read a `gen --config` file

    The file is a DatasetConfig document; a top-level `preset` key pulls the
    named preset in first and the remaining keys override it.
    """
    raw = _load_yaml(path)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise FormatError(path, 1, "config file must be a key-value mapping")
    preset = raw.pop("preset", None)
    if preset is not None:
        library = library or get_scene_library()
        try:
            raw = merge_settings(library.get_preset(str(preset)), raw)
        except KeyError as e:
            raise TubeletEngineError(str(e.args[0]))
    return DatasetConfig.model_validate(raw)


# Global instance for easy import
_scene_library: Optional[SceneLibrary] = None


def get_scene_library() -> SceneLibrary:
    """Get the packaged preset library (loaded on first use)"""
    global _scene_library
    if _scene_library is None:
        _scene_library = SceneLibrary()
    return _scene_library
