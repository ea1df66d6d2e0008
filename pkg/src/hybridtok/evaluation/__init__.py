from .ablation import AblationResult, run_ablation
from .metrics import desk_fid, frechet_distance, psnr, ssim
from .probe import linear_probe, silhouette
from .report import MetricReport, evaluate

__all__ = [
    "AblationResult",
    "MetricReport",
    "desk_fid",
    "evaluate",
    "frechet_distance",
    "linear_probe",
    "psnr",
    "run_ablation",
    "silhouette",
    "ssim",
]
