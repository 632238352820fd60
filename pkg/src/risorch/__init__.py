"""Physics-aware orchestration of reconfigurable intelligent surfaces.

Offline, :func:`compile_codebook` focuses the surface on each candidate user
location and records phases, per-element influence and the single-user SNR.
Online, :func:`allocate` merges several users' entries into one common
configuration, :func:`apply_energy_off` switches off unused elements and
:func:`admit` gates new users on phase compatibility.
"""
from .codebook import (Codebook, CodebookEntry, CompilationError, compile_codebook, compile_entry,
                       load_codebook, save_codebook, scene_fingerprint, smooth_influence)
from .em import (GridSpec, IncidentField, RisState, SnrMap, coupling_residual, direct_field,
                 secondary_field, snr_db, snr_map, solve_incident_field, total_field)
from .errors import (CodebookFormatError, ConfigurationError, EvaluationError, FingerprintMismatchError,
                     GeometryError, RisError, SolverDivergenceError)
from .evaluation import (ExperimentConfig, MetricsReport, run_admission_mc, run_allocation_mc, run_ee_mc,
                         run_experiments)
from .orchestrator import (AdmissionPolicy, AdmissionResult, AllocParams, CommonConfig, EEParams, Tier,
                           admit, allocate, allocate_baseline, apply_energy_off, blending_factor,
                           vote_weight)
from .phase import quantize_phase, wrap_phase
from .scene import Panel, RisGeometry, SceneConfig, build_geometry

__version__ = "0.1.0"
