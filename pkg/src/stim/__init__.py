"""STIM: spatiotemporal periodic interest modeling over long behavior sequences (numpy)."""

from .context import HolidayCalendar, Material, assign_groups, geohash_decode, geohash_encode
from .data_io import SyntheticSpec, generate_examples, load_dataset, time_split
from .errors import ConfigError, DataError, UndefinedMetricError
from .events import BehaviorEvent, BehaviorSequence, Example, RequestContext
from .forgetting import CurveParams, build_masks, find_review_points
from .gsu import gsu_search
from .harness import MetricsReport, evaluate, run_ablation_suite
from .metrics import auc, gauc
from .model import GSUBaseline, ModelConfig, STIM, build_model, fit, load_model

__version__ = "0.1.0"
