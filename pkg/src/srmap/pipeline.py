"""End-to-end SR map pipeline: forward, LRP, saliency, edges, overlay, evaluation."""

import contextlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import casal, lrp, metrics, netrt
from .edges import EdgeMap, canny, fuse
from .tensor import gray_to_rgb, normalize_minmax, read_image, write_image, write_mask_png, write_raw

log = logging.getLogger(__name__)


@contextlib.contextmanager
def stage(name):
    """Tag any escaping exception with the pipeline stage it came from."""
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


@dataclass
class PipelineConfig:
    manifest: str | None = None
    weights: str | None = None
    inputs: list = field(default_factory=list)
    output_dir: str = "out"
    epsilon: float = lrp.DEFAULT_EPSILON
    start: str = "probability"
    saliency: casal.SaliencyConfig = field(default_factory=casal.SaliencyConfig)
    canny_sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.2
    ssim: metrics.SsimConfig = field(default_factory=metrics.SsimConfig)
    figures: bool = True
    jobs: int = 1


@dataclass(eq=False)
class SRReport:
    image: np.ndarray
    class_index: int
    label: str
    probability: float
    relevance: lrp.PixelRelevanceMap
    state: lrp.RelevanceState
    residuals: list
    sr: casal.SaliencyMap | None = None
    edges: EdgeMap | None = None
    fused: np.ndarray | None = None


def match_channels(img, net):
    """Replicate a gray image to RGB (or average RGB to gray) to fit the network input."""
    want = net.input_shape[2]
    have = img.shape[2]
    if want == have:
        return img
    if want == 3 and have == 1:
        return gray_to_rgb(img)
    if want == 1 and have == 3:
        return img.mean(axis=2, keepdims=True)
    return img


def relevance_step(net, img, cfg):
    """Step one: top-class retention and backward propagation."""
    with stage("netrt/forward"):
        trace = netrt.forward(net, img)
        out = trace.output
        k = int(np.argmax(out))
    with stage("lrp/propagate"):
        rmap, state = lrp.propagate(net, trace, k, cfg.epsilon, cfg.start)
        residuals = lrp.conservation_check(state)
    return SRReport(img, k, net.label(k), float(out[k]), rmap, state, residuals)


def run_pipeline(net, img, cfg, with_edges=True):
    img = match_channels(np.asarray(img, dtype=np.float64), net)
    report = relevance_step(net, img, cfg)
    with stage("casal/context_aware_saliency"):
        report.sr = casal.context_aware_saliency(report.relevance.values, cfg.saliency)
    if with_edges:
        with stage("edges/canny"):
            report.edges = canny(img, cfg.canny_sigma, cfg.canny_low, cfg.canny_high)
        with stage("edges/fuse"):
            report.fused = fuse(report.sr, report.edges)
    return report


def _fmt_list(values):
    return " ".join(repr(float(v)) for v in values)


def metadata_text(report, cfg, source=""):
    lines = [
        f"image = {source}",
        f"predicted_class = {report.class_index}",
        f"label = {report.label}",
        f"probability = {report.probability!r}",
        f"source_score = {report.state.source_score!r}",
        f"epsilon = {cfg.epsilon!r}",
        f"start = {cfg.start}",
        # output layer first, input pixels last
        f"layer_sums = {_fmt_list(report.state.layer_sums[::-1])}",
        f"residuals = {_fmt_list(report.residuals[::-1])}",
        f"max_residual = {max(report.residuals)!r}",
    ]
    if report.sr is not None:
        lines.append(f"attended_pixels = {report.sr.meta.get('attended_pixels', 0)}")
        lines.append(f"k_used = {' '.join(str(k) for k in report.sr.meta.get('k_used', []))}")
    if report.edges is not None:
        lines.append(f"edge_pixels = {report.edges.count}")
    return "\n".join(lines) + "\n"


def write_report(report, cfg, out_dir, stem, source=""):
    """Write the documented file set; returns the list of paths written.

    ``<stem>.relevance.{raw,png}``, ``<stem>.sr.{raw,png}``,
    ``<stem>.edges.{raw,png}``, ``<stem>.fused.png``, ``<stem>.meta.txt``
    and, with figures enabled, ``<stem>.panel.png``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, fn, data):
        p = out / f"{stem}.{name}"
        fn(p, data)
        written.append(p)

    with stage("io/write"):
        put("relevance.raw", write_raw, report.relevance.values)
        put("relevance.png", write_image, normalize_minmax(report.relevance.values))
        if report.sr is not None:
            put("sr.raw", write_raw, report.sr.values)
            put("sr.png", write_image, report.sr.values)
        if report.edges is not None:
            put("edges.raw", write_raw, report.edges.edges.astype(np.float64))
            put("edges.png", write_mask_png, report.edges.edges)
        if report.fused is not None:
            put("fused.png", write_image, report.fused)
        p = out / f"{stem}.meta.txt"
        p.write_text(metadata_text(report, cfg, source))
        written.append(p)
    if cfg.figures and report.sr is not None and report.edges is not None:
        from .report import render_sr_panel

        with stage("report/figure"):
            p = out / f"{stem}.panel.png"
            render_sr_panel(p, report)
            written.append(p)
    return written


def evaluate_one(net, path, cfg):
    """EvalRecord for one image; read or pipeline failures become error records."""
    path = Path(path)
    try:
        img = match_channels(read_image(path), net)
        report = run_pipeline(net, img, cfg, with_edges=False)
        reference = casal.context_aware_saliency(img, cfg.saliency)
        return metrics.evaluate_image(report.relevance.values, report.sr.values,
                                      reference.values, cfg.ssim, image_id=path.name)
    except Exception as exc:  # recorded, not fatal
        log.warning("skipping %s: %s", path, exc)
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        return metrics.EvalRecord(path.name, float("nan"), float("nan"), None, error=msg)


def _evaluate_star(args):
    return evaluate_one(*args)


def evaluate_corpus(net, paths, cfg):
    """Records in filename order, whatever order the workers finish in."""
    paths = sorted((Path(p) for p in paths), key=lambda p: p.name)
    if cfg.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            records = list(pool.map(_evaluate_star, [(net, p, cfg) for p in paths]))
    else:
        records = [evaluate_one(net, p, cfg) for p in paths]
    return records, metrics.aggregate(records)


IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def corpus_files(directory):
    return sorted((p for p in Path(directory).iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
                  key=lambda p: p.name)
