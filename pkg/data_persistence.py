import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from utils import TOOL_NAME, __version__, run_timestamp

LOGGER = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"


class _Report(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CounterexampleModel(_Report):
    nu: float
    t: float
    value: float


class GridModel(_Report):
    nu_values: List[float]
    t_max: float
    t_count: int
    log_spaced: bool


class BlockCheckModel(_Report):
    variant: str
    edge: float
    gamma: float
    verdict: str


class ClauseModel(_Report):
    name: str
    passed: bool
    value: Optional[float] = None
    witness: Optional[CounterexampleModel] = None
    applicable: bool = True
    detail: str = ""


class CertificateReport(_Report):
    """certificate.json"""
    scenario: str
    verdict: str
    nu0: float
    gamma: float
    slope_d: Optional[float] = None
    counterexample: Optional[CounterexampleModel] = None
    grid: Optional[GridModel] = None
    asymptote_checked: bool
    component: str
    exclusion_radius: float
    skipped_poles: int = 0
    notes: List[str] = []
    expect: Optional[str] = None
    block: Optional[BlockCheckModel] = None
    clauses: Optional[List[ClauseModel]] = None
    correction_radius: Optional[float] = None


class LayoutBlockModel(_Report):
    name: str
    multiplicity: int
    alignment: str


class LayoutModel(_Report):
    blocks: List[LayoutBlockModel]
    dim: int


class BlockSystemReport(_Report):
    """blocksystem.json"""
    variant: str
    layout: LayoutModel
    labels: List[str]
    M0: List[List[float]]
    M1: List[List[float]]
    rho: float
    spatial_tag: str
    provenance: List[str]
    rows: List[str] = []


class TfReport(_Report):
    """tf_report.json"""
    variant: str
    sample_count: int
    max_rel_error_electric: float
    max_rel_error_magnetic: float
    tolerance: float
    worst_point: Optional[List[float]] = None
    status: str
    failures: List[str]
    paper_literal_s3: bool = False


class ProbeStats(_Report):
    max_abs: float
    rms: float


class SimulationSummary(_Report):
    """summary.json"""
    variant: str
    n_cells: int
    dx: float
    dt: float
    n_steps: int
    cfl_ratio: float
    sigma_max: float
    energy_peak: Optional[float] = None
    energy_final: Optional[float] = None
    energy_phys_final: Optional[float] = None
    state_energy_final: Optional[float] = None
    decay_rate: Optional[float] = None
    r_squared: Optional[float] = None
    decay_window: Optional[List[float]] = None
    reflection_db: Optional[float] = None
    probes: Dict[str, ProbeStats] = {}
    files: List[str] = []


class FixedPointReport(_Report):
    """fixedpoint.json"""
    kind: str
    converged: bool
    iterations: int
    residual: Optional[float] = None
    lipschitz: Optional[float] = None
    slope_d: Optional[float] = None
    predicted_ratio: Optional[float] = None
    max_observed_ratio: Optional[float] = None
    ball_radius: float
    inside_ball: bool
    nu: float
    nu_compare: Optional[float] = None
    compare_rel_diff: Optional[float] = None


class RunManifest(_Report):
    """manifest.json (inside the metadata envelope)"""
    command: str
    config_path: Optional[str] = None
    scenario: Optional[str] = None
    output_dir: str
    seed: Optional[int] = None
    tool: str = TOOL_NAME
    version: str = __version__
    timestamp: str
    config: Dict[str, Any]
    outputs: List[str] = []
    exit_code: int = 0


REPORT_MODELS: Dict[str, Type[BaseModel]] = {
    "certificate": CertificateReport,
    "blocksystem": BlockSystemReport,
    "tf_report": TfReport,
    "summary": SimulationSummary,
    "fixedpoint": FixedPointReport,
    "manifest": RunManifest,
}


def jsonable(value: Any) -> Any:
    """Non-finite floats become None; tuples become lists."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        return jsonable(value.item())
    return value


def validate_report(kind: str, payload: Dict) -> Tuple[bool, List[str]]:
    """Re-validate an emitted document against its report model."""
    model = REPORT_MODELS.get(kind)
    if model is None:
        return False, [f"unknown report kind: {kind}"]
    try:
        model.model_validate(payload)
    except ValidationError as exc:
        return False, [f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in exc.errors()]
    return True, []


def report_schemas() -> Dict[str, Dict]:
    return {kind: model.model_json_schema() for kind, model in REPORT_MODELS.items()}


def write_schemas(directory: Union[str, Path]) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, schema in report_schemas().items():
        path = directory / f"{kind}.schema.json"
        path.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    return written


class ReportStore:
    """Writes reports and tables under one output directory, atomically."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: List[str] = []

    @staticmethod
    def calculate_checksum(data: Any) -> str:
        data_str = json.dumps(data, sort_keys=True)
        return hashlib.sha256(data_str.encode()).hexdigest()[:16]

    def _atomic_write(self, name: str, text: str) -> Path:
        file_path = self.out_dir / name
        temp_path = self.out_dir / f"{name}.tmp"
        try:
            temp_path.write_text(text, encoding="utf-8")
            temp_path.replace(file_path)
        except OSError:
            if temp_path.exists():
                temp_path.unlink()
            raise
        if name not in self.outputs:
            self.outputs.append(name)
        return file_path

    def write_report(self, kind: str, payload: Union[Dict, BaseModel], name: Optional[str] = None) -> Path:
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        payload = jsonable(payload)
        ok, errors = validate_report(kind, payload)
        if not ok:
            raise ValueError(f"{kind} report does not match its schema: {'; '.join(errors)}")
        text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"
        return self._atomic_write(name or f"{kind}.json", text)

    def write_manifest(self, manifest: RunManifest, name: str = "manifest.json") -> Path:
        data = jsonable(manifest.model_dump(mode="json"))
        envelope = {
            "metadata": {
                "timestamp": run_timestamp(),
                "version": __version__,
                "checksum": self.calculate_checksum(data),
            },
            "data": data,
        }
        return self._atomic_write(name, json.dumps(envelope, indent=2, sort_keys=True, allow_nan=False) + "\n")

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return self._atomic_write(name, text)

    def read_json(self, name: str) -> Dict:
        """Plain reports come back as-is; enveloped files are unwrapped and checksummed."""
        file_path = self.out_dir / name
        with open(file_path, "r", encoding="utf-8") as handle:
            content = json.load(handle)
        if isinstance(content, dict) and set(content) == {"metadata", "data"}:
            checksum = content["metadata"].get("checksum")
            if checksum and checksum != self.calculate_checksum(content["data"]):
                LOGGER.warning("Integrity check failed for %s", file_path)
            return content["data"]
        return content

    def read_csv(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.out_dir / name)
