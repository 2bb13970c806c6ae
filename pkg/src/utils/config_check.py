# src/utils/config_check.py

"""
Utility: Load and validate experiment configuration files.

The YAML document is checked against schemas/experiment_schema.json and then
against the cross-field rules the schema cannot express (antenna counts per
transmitter, cluster indices inside the network, sweep compatibility).
Every problem is reported with the line of the offending YAML node.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import yaml
from jsonschema import Draft202012Validator

SCHEMA_PATH = Path(__file__).resolve().parents[2] / "schemas" / "experiment_schema.json"

# strategies that accept any linear constraint set; the rest need per-transmitter budgets
GENERAL_CONSTRAINT_STRATEGIES = ("oracle", "oracle_incoherent")


class ConfigValidationError(Exception):
    """Raised when an experiment file fails validation; carries line-level diagnostics."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("Invalid experiment configuration:\n  " + "\n  ".join(self.diagnostics))


def _line_of(root: yaml.Node, path: Sequence[Union[str, int]]) -> int:
    """1-based line of the deepest node along path that exists in the document."""
    node = root
    for key in path:
        if isinstance(node, yaml.MappingNode):
            child = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            child = node.value[key]
        else:
            child = None
        if child is None:
            break
        node = child
    return node.start_mark.line + 1


def _dotted(path: Sequence[Union[str, int]]) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def load_schema(schema_path: Union[str, Path] = SCHEMA_PATH) -> Dict[str, Any]:
    with open(schema_path, "r") as f:
        return json.load(f)


def _semantic_problems(config: Dict[str, Any]) -> List[tuple]:
    """Cross-field rules; returns (path, message) pairs."""
    problems = []
    dims = config["dimensions"]
    num_tx, num_rx = dims["num_tx"], dims["num_rx"]
    antennas = dims["antennas"]
    if isinstance(antennas, list) and len(antennas) != num_tx:
        problems.append((["dimensions", "antennas"], f"{len(antennas)} antenna counts for {num_tx} transmitters"))

    sweep = config.get("sweep")
    sweeps_terminals = sweep is not None and sweep["variable"] == "num_rx"
    if sweeps_terminals:
        for i, value in enumerate(sweep["values"]):
            if value != int(value) or value < 1:
                problems.append((["sweep", "values", i], f"terminal count must be a positive integer, got {value}"))

    clusters = config["clusters"]
    if clusters["kind"] == "interference_channel" and num_rx != num_tx:
        problems.append((["clusters", "kind"], f"interference channel needs as many terminals as transmitters ({num_tx}), got {num_rx}"))
    if clusters["kind"] in ("interference_channel", "explicit") and sweeps_terminals:
        problems.append((["sweep", "variable"], f"cannot sweep num_rx with '{clusters['kind']}' clusters"))
    if clusters["kind"] == "explicit":
        for key in ("data_sets", "coord_sets"):
            sets = clusters[key]
            if len(sets) != num_tx:
                problems.append((["clusters", key], f"{len(sets)} sets for {num_tx} transmitters"))
            for j, members in enumerate(sets):
                for i, k in enumerate(members):
                    if k >= num_rx:
                        problems.append((["clusters", key, j, i], f"terminal {k} is outside 0..{num_rx - 1}"))

    constraints = config["constraints"]
    power_key = "power_dbm" if "power_dbm" in constraints else "power"
    power = constraints[power_key]
    if isinstance(power, list):
        expected = {"per_transmitter": num_tx, "total": 1}.get(constraints["kind"])
        if constraints["kind"] == "per_antenna":
            expected = sum(antennas) if isinstance(antennas, list) else antennas * num_tx
        if len(power) != expected:
            problems.append((["constraints", power_key], f"{len(power)} limits for {expected} {constraints['kind']} constraints"))
    if sweep is not None and sweep["variable"] == "power_dbm" and power_key == "power":
        problems.append((["sweep", "variable"], "power_dbm sweep needs constraints.power_dbm"))

    needs_per_transmitter = set(config["strategies"]) - set(GENERAL_CONSTRAINT_STRATEGIES)
    if needs_per_transmitter and constraints["kind"] != "per_transmitter":
        problems.append((["strategies"], f"{sorted(needs_per_transmitter)} require per_transmitter constraints"))

    weights = config.get("weights")
    if isinstance(weights, list):
        if len(weights) != num_rx:
            problems.append((["weights"], f"{len(weights)} weights for {num_rx} terminals"))
        elif not any(w > 0 for w in weights):
            problems.append((["weights"], "at least one weight must be positive"))
        if sweeps_terminals:
            problems.append((["weights"], "explicit weights cannot be combined with a num_rx sweep"))

    model = config["channel_model"]
    if "path_loss_db" in model and isinstance(model["path_loss_db"], list):
        rows = model["path_loss_db"]
        if len(rows) != num_tx or any(len(r) != num_rx for r in rows):
            problems.append((["channel_model", "path_loss_db"], f"path loss must be a {num_tx} x {num_rx} table"))
        if sweeps_terminals:
            problems.append((["channel_model", "path_loss_db"], "a path-loss table cannot be combined with a num_rx sweep"))
    if "path_loss_range_db" in model:
        low, high = model["path_loss_range_db"]
        if low > high:
            problems.append((["channel_model", "path_loss_range_db"], f"empty range [{low}, {high}]"))
    if model["kind"] == "csv" and sweeps_terminals:
        problems.append((["channel_model", "kind"], "a channel dump cannot be combined with a num_rx sweep"))
    return problems


def validate_config(config: Any, root: yaml.Node = None, schema: Dict[str, Any] = None) -> None:
    """
    Validates a parsed experiment configuration.

    Args:
        config: parsed YAML document.
        root: composed YAML node tree used for line numbers (optional).
        schema: JSON schema (defaults to schemas/experiment_schema.json).

    Raises:
        ConfigValidationError: with one diagnostic per problem.
    """
    schema = schema or load_schema()

    def where(path) -> str:
        return f"line {_line_of(root, path)}: " if root is not None else ""

    validator = Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigValidationError([
            f"{where(list(e.absolute_path))}{_dotted(list(e.absolute_path))}: {e.message}" for e in errors
        ])

    problems = _semantic_problems(config)
    if problems:
        raise ConfigValidationError([f"{where(path)}{_dotted(path)}: {message}" for path, message in problems])


def load_config(config_path: Union[str, Path], debug: bool = False) -> Dict[str, Any]:
    """
    Reads and validates an experiment file.

    Raises:
        FileNotFoundError: if the file does not exist.
        ConfigValidationError: on YAML syntax errors or validation failures.
    """
    config_path = Path(config_path)
    if not config_path.is_file():
        raise FileNotFoundError(f"Experiment file not found: {config_path}")
    text = config_path.read_text()

    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        config = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        prefix = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigValidationError([f"{prefix}{getattr(e, 'problem', None) or e}"]) from e
    if root is None:
        raise ConfigValidationError(["line 1: experiment file is empty"])

    validate_config(config, root)
    if debug:
        print(f"[DEBUG] Experiment file validated: {config_path}")
    return config
