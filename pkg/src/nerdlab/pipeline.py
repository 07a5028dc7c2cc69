"""Cohort-level orchestration: dataset, training, fitting, analysis and the artifact index.

Output layout under ``out_dir``::

    config.json                         resolved run configuration
    dataset.json                        synthetic cohort
    models/<family>/<subject>/          ckpt_<epoch>.json, epoch_log.csv, done.json
    fits/<family>/<subject>.json        FitResult, with <subject>_nll.csv beside it
    fits/fit_summary.csv, fits/nll_paired_test.json
    analysis/                           CSVs, SVGs and summary.md
    index.md                            artifact index
"""

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass
import io
import json
import logging
import multiprocessing
from pathlib import Path
import warnings

import numpy as np

from . import svgplot
from .analysis import (
    align_signs,
    cluster_subjects,
    cluster_voxels,
    correlation_rdm,
    extract_noise_trajectories,
    fit_reward_model,
    fit_reward_model_with_clusters,
    mds_embed,
    smooth,
    stepwise_rdm,
    steps_to_fraction,
    subject_trajectory_rdm,
    two_stage_pca,
)
from .cluster import linkage_tree
from .diffusion import run_episodes, sample_starts
from .envsim import generate_cohort, load_dataset, save_dataset
from .errors import (
    DatasetParseError,
    DegenerateInputError,
    FormatVersionError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericFailureError,
    SingularDesignError,
)
from .fileio import atomic_write_text, csv_text, file_sha256, write_csv, write_json
from .fitting import FitResult, fit_subject
from .numerics import paired_t_test
from .rng import RngStream
from .training import (
    EPOCH_LOG_COLUMNS,
    EpochLog,
    checkpoint_from_dict,
    save_checkpoint,
    train_model,
)

log = logging.getLogger("nerdlab")

DATASET_FILE = "dataset.json"
CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.md"
INDEX_FILE = "index.md"


class PipelineError(Exception):
    """A user-facing failure; ``exit_code`` follows the CLI convention."""

    def __init__(self, message, exit_code=1):
        super().__init__(message)
        self.exit_code = exit_code


# ------------------------------------------------------------------ helpers

def out_path(cfg, *parts):
    return Path(cfg.out_dir).joinpath(*parts)


def write_resolved_config(cfg):
    # where the run lives and how many workers it used do not change any result
    d = cfg.to_dict()
    for k in ("out_dir", "jobs"):
        d.pop(k)
    write_json(out_path(cfg, CONFIG_FILE), d)


def load_cohort(path):
    try:
        return load_dataset(path)
    except FileNotFoundError:
        raise PipelineError(f"dataset not found: {path} (run gen-data first)") from None
    except (DatasetParseError, FormatVersionError, InvalidArgumentError) as exc:
        raise PipelineError(f"cannot load dataset {path}: {exc}") from None


def select_subjects(cohort, wanted):
    if wanted is None:
        return list(cohort.subjects)
    known = set(cohort.subject_ids)
    missing = [s for s in wanted if s not in known]
    if missing:
        raise PipelineError(f"unknown subject ids: {', '.join(missing)}")
    return [s for s in cohort.subjects if s.subject_id in set(wanted)]


def _map(fn, jobs, items):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
        return list(pool.map(fn, items))


# ----------------------------------------------------------------- gen-data

def cmd_gen_data(cfg, dataset_path=None):
    path = Path(dataset_path) if dataset_path else out_path(cfg, DATASET_FILE)
    cohort = generate_cohort(cfg.seed, cfg.dataset)
    write_resolved_config(cfg)
    save_dataset(cohort, path)
    n_trials = len(cohort.subjects[0].trials) if cohort.subjects else 0
    return cohort, f"wrote {path}: {len(cohort.subjects)} subjects, V = {cohort.V}, {n_trials} trials each"


# -------------------------------------------------------------------- train

def model_dir(cfg, family, subject_id):
    return out_path(cfg, "models", family, subject_id)


def _ckpt_name(epoch):
    return f"ckpt_{epoch:06d}.json"


def expected_epochs(tc):
    eps = list(range(0, tc.n_epochs + 1, tc.checkpoint_stride))
    if eps[-1] != tc.n_epochs:
        eps.append(tc.n_epochs)
    return eps


def _read_ckpt(path):
    try:
        return checkpoint_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, ValueError, TypeError, FormatVersionError) as exc:
        raise PipelineError(f"corrupt checkpoint {path}: {exc}") from None


def _read_log(path):
    if not path.exists():
        return []
    rows = list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))
    return [EpochLog(int(r["epoch"]), *(float(r[c]) for c in EPOCH_LOG_COLUMNS[1:])) for r in rows]


def _write_log(path, logs):
    atomic_write_text(path, csv_text(EPOCH_LOG_COLUMNS, [lg.row() for lg in logs]))


@dataclass
class TrainOutcome:
    subject_id: str
    family: str
    status: str
    message: str = ""


def _train_task(args):
    cfg, subject, family = args
    tc = cfg.train_config(family)
    d = model_dir(cfg, family, subject.subject_id)
    d.mkdir(parents=True, exist_ok=True)
    chash = tc.hash()
    done = d / "done.json"
    if done.exists():
        info = json.loads(done.read_text(encoding="utf-8"))
        if info.get("config_hash") == chash and info.get("n_epochs") == tc.n_epochs:
            return TrainOutcome(subject.subject_id, family, "skipped", "already complete")
    resume = None
    ckpts = sorted(d.glob("ckpt_*.json"))
    if ckpts:
        resume = _read_ckpt(ckpts[-1])
        if resume.config_hash != chash:
            raise PipelineError(
                f"{d} holds checkpoints from a different configuration; use a fresh --out directory"
            )
        if resume.epoch > tc.n_epochs:
            raise PipelineError(f"{d} already has epoch {resume.epoch} > n_epochs {tc.n_epochs}")
    logs = [lg for lg in _read_log(d / "epoch_log.csv") if resume and lg.epoch <= resume.epoch]
    log_path = d / "epoch_log.csv"
    log.info("training %s/%s from epoch %d", family, subject.subject_id, resume.epoch if resume else 0)

    def on_ckpt(ck):
        save_checkpoint(ck, d / _ckpt_name(ck.epoch))
        _write_log(log_path, logs)

    def on_log(lg):
        logs.append(lg)

    try:
        train_model(subject, tc, resume=resume, on_checkpoint=on_ckpt, on_log=on_log)
    except NumericFailureError as exc:
        _write_log(log_path, logs)
        return TrainOutcome(subject.subject_id, family, "failed", f"numeric failure at step {exc.step}: {exc}")
    _write_log(log_path, logs)
    write_json(done, {"config_hash": chash, "n_epochs": tc.n_epochs, "epochs": expected_epochs(tc)})
    return TrainOutcome(subject.subject_id, family, "trained")


def cmd_train(cfg, dataset_path=None):
    cohort = load_cohort(dataset_path or out_path(cfg, DATASET_FILE))
    subjects = select_subjects(cohort, cfg.subjects)
    write_resolved_config(cfg)
    tasks = [(cfg, s, fam) for fam in cfg.families for s in subjects]
    outcomes = _map(_train_task, cfg.jobs, tasks)
    failed = [o for o in outcomes if o.status == "failed"]
    lines = [f"{o.family}/{o.subject_id}: {o.status}" + (f" ({o.message})" if o.message else "") for o in outcomes]
    if failed:
        names = ", ".join(f"{o.family}/{o.subject_id}" for o in failed)
        raise PipelineError("\n".join(lines) + f"\nnumeric failure in: {names}", exit_code=2)
    return outcomes, "\n".join(lines)


def load_model_checkpoints(cfg, family, subject_id):
    """All checkpoints of a finished run in epoch order; raises if any are missing."""
    tc = cfg.train_config(family)
    d = model_dir(cfg, family, subject_id)
    want = expected_epochs(tc)
    missing = [e for e in want if not (d / _ckpt_name(e)).exists()]
    if missing:
        shown = ", ".join(str(e) for e in missing[:8]) + (" ..." if len(missing) > 8 else "")
        raise PipelineError(f"{family}/{subject_id}: missing checkpoints for epochs {shown}")
    cks = [_read_ckpt(d / _ckpt_name(e)) for e in want]
    if any(ck.config_hash != tc.hash() for ck in cks):
        raise PipelineError(f"{family}/{subject_id}: checkpoints do not match the current configuration")
    return cks


def read_epoch_logs(cfg, family, subject_id):
    return _read_log(model_dir(cfg, family, subject_id) / "epoch_log.csv")


# ---------------------------------------------------------------------- fit

FIT_SUMMARY_COLUMNS = ("subject", "family", "e_star", "frozen_epoch", "min_nll",
                       "model_mean_reward", "human_mean_reward")


def fit_result_to_dict(fr, nll_csv):
    return {
        "subject_id": fr.subject_id,
        "family": fr.family,
        "e_star": fr.e_star,
        "frozen_epoch": fr.frozen_epoch,
        "min_nll": fr.min_nll,
        "model_mean_reward": fr.model_reward,
        "nll_csv": nll_csv,
        "nll_convention": "per-voxel mean Gaussian NLL",
    }


def _fit_task(args):
    cfg, subject, family = args
    cks = load_model_checkpoints(cfg, family, subject.subject_id)
    fr = fit_subject(subject, cks, cfg.train_config(family).schedule(), cfg.fit_config(), family)
    d = out_path(cfg, "fits", family)
    name = f"{subject.subject_id}_nll.csv"
    write_csv(d / name, ("epoch", "mean_nll", "model_mean_reward"),
              zip(fr.epochs, fr.per_epoch_mean_nll.tolist(), fr.per_epoch_model_reward.tolist()))
    write_json(d / f"{subject.subject_id}.json", fit_result_to_dict(fr, name))
    return fr


def load_fit(cfg, family, subject_id):
    p = out_path(cfg, "fits", family, f"{subject_id}.json")
    if not p.exists():
        return None
    doc = json.loads(p.read_text(encoding="utf-8"))
    rows = list(csv.DictReader(io.StringIO((p.parent / doc["nll_csv"]).read_text(encoding="utf-8"))))
    return FitResult(
        subject_id=doc["subject_id"],
        family=doc["family"],
        per_epoch_mean_nll=np.array([float(r["mean_nll"]) for r in rows]),
        e_star=int(doc["e_star"]),
        min_nll=float(doc["min_nll"]),
        epochs=[int(r["epoch"]) for r in rows],
        per_epoch_model_reward=np.array([float(r["model_mean_reward"]) for r in rows]),
    )


def paired_nll_test(fits_by_family):
    """Paired t-test of min NLL (NERD minus control) over subjects fitted in both families."""
    a, b = fits_by_family.get("nerd", {}), fits_by_family.get("control", {})
    common = sorted(set(a) & set(b))
    out = {"subjects": common, "n": len(common), "t": None, "p": None, "dof": None}
    out["nerd_min_nll"] = [a[s].min_nll for s in common]
    out["control_min_nll"] = [b[s].min_nll for s in common]
    if len(common) >= 2:
        try:
            t, p = paired_t_test(out["nerd_min_nll"], out["control_min_nll"])
            out.update(t=t, p=p, dof=len(common) - 1)
        except DegenerateInputError as exc:
            out["note"] = str(exc)
    else:
        out["note"] = "needs at least two subjects fitted in both families"
    return out


def cmd_fit(cfg, dataset_path=None):
    cohort = load_cohort(dataset_path or out_path(cfg, DATASET_FILE))
    subjects = select_subjects(cohort, cfg.subjects)
    write_resolved_config(cfg)
    gaps = []
    for fam in cfg.families:
        for s in subjects:
            try:
                load_model_checkpoints(cfg, fam, s.subject_id)
            except PipelineError as exc:
                gaps.append(str(exc))
    if gaps:
        raise PipelineError("cannot fit, checkpoints are missing:\n" + "\n".join(gaps))
    tasks = [(cfg, s, fam) for fam in cfg.families for s in subjects]
    results = _map(_fit_task, cfg.jobs, tasks)
    by_fam = {}
    rows = []
    for (_, s, fam), fr in zip(tasks, results):
        by_fam.setdefault(fam, {})[s.subject_id] = fr
        rows.append((s.subject_id, fam, fr.e_star, fr.frozen_epoch, fr.min_nll, fr.model_reward,
                     s.mean_achieved_reward))
    write_csv(out_path(cfg, "fits", "fit_summary.csv"), FIT_SUMMARY_COLUMNS, rows)
    test = paired_nll_test(by_fam)
    write_json(out_path(cfg, "fits", "nll_paired_test.json"), test)
    lines = [f"{fam}/{sid}: e* = {fr.e_star} (epoch {fr.frozen_epoch}), min NLL {fr.min_nll:.4f}"
             for fam, d in by_fam.items() for sid, fr in d.items()]
    if test["t"] is not None:
        lines.append(f"paired t-test NERD vs control min NLL: t({test['dof']}) = {test['t']:.4f}, p = {test['p']:.4g}")
    return results, "\n".join(lines)


# ------------------------------------------------------------------ analyze

@dataclass
class SubjectAnalysis:
    subject_id: str
    family: str
    frozen_epoch: int
    model_reward: float
    reward_mean: np.ndarray
    reward_std: np.ndarray
    start_reward: float
    gain_step: int
    states: np.ndarray  # (T+1, n_episodes, V)
    trajset: object
    voxel_labels: np.ndarray
    trajectory: object


def _analyze_task(args):
    cfg, subject, family, fr = args
    acfg = cfg.analysis
    tc = cfg.train_config(family)
    schedule = tc.schedule()
    d = model_dir(cfg, family, subject.subject_id)
    ck = _read_ckpt(d / _ckpt_name(fr.frozen_epoch))
    rng = RngStream(cfg.seed, (subject.subject_id, family, "analysis"))
    stochastic = cfg.fitting.stochastic_for(family)
    base = subject.baselines
    x0 = base[np.arange(acfg.n_episodes) % len(base)]
    starts = sample_starts(x0, schedule, rng.substream("starts"), tc.start_mode)
    eb = run_episodes(ck.params, starts, schedule, subject.raw_reward, rng.substream("episodes"), stochastic)
    mean, std = eb.rewards.mean(axis=1), eb.rewards.std(axis=1, ddof=1)
    r0 = float(np.mean(subject.raw_reward(starts)))
    traj = extract_noise_trajectories(ck.params, subject, schedule, acfg.n_episodes,
                                      rng.substream("noise"), family, stochastic, starts=starts)
    k = min(acfg.voxel_k, subject.V)
    labels = cluster_voxels(traj, k, rng.substream("voxels"))
    return SubjectAnalysis(
        subject.subject_id, family, fr.frozen_epoch, fr.model_reward, mean, std, r0,
        steps_to_fraction(mean, acfg.gain_fraction, start=r0), eb.states, traj, labels,
        two_stage_pca(traj, acfg.n_components),
    )


class Report:
    """Collects summary-document sections and skipped-section warnings."""

    def __init__(self):
        self.lines = []
        self.skipped = []

    def h(self, text, level=2):
        self.lines += [f"{'#' * level} {text}", ""]

    def p(self, text):
        self.lines += [text, ""]

    def img(self, rel, alt):
        self.lines += [f"![{alt}]({rel})", ""]

    def table(self, header, rows):
        self.lines.append("| " + " | ".join(header) + " |")
        self.lines.append("|" + "---|" * len(header))
        for r in rows:
            self.lines.append("| " + " | ".join(_cell(v) for v in r) + " |")
        self.lines.append("")

    def skip(self, section, why):
        msg = f"section skipped: {section}: {why}"
        warnings.warn(msg, stacklevel=2)
        self.skipped.append(msg)
        self.p(f"_Skipped: {why}_")

    def text(self):
        return "\n".join(self.lines).rstrip("\n") + "\n"


def _cell(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _write(adir, name, text):
    atomic_write_text(adir / name, text)
    return name


def cmd_analyze(cfg, dataset_path=None):
    """Run every analysis on frozen models and write CSVs, SVGs and ``summary.md``.

    Returns ``(report, message)``; ``report.skipped`` lists skipped sections.
    """
    cohort = load_cohort(dataset_path or out_path(cfg, DATASET_FILE))
    subjects = select_subjects(cohort, cfg.subjects)
    write_resolved_config(cfg)
    adir = out_path(cfg, "analysis")
    adir.mkdir(parents=True, exist_ok=True)
    rep = Report()
    rep.h("NERD lab analysis summary", 1)
    rep.p(f"Run seed {cfg.seed}; configuration hash {cfg.hash()}; {len(subjects)} subjects; "
          f"V = {cohort.V}.  Hyperparameters are package defaults or user settings, not published values.")

    fits = {fam: {} for fam in cfg.families}
    for fam in cfg.families:
        for s in subjects:
            fr = load_fit(cfg, fam, s.subject_id)
            if fr is not None:
                fits[fam][s.subject_id] = fr
    fams = [f for f in cfg.families if len(fits[f]) == len(subjects) and subjects]
    for f in cfg.families:
        if f not in fams:
            rep.skip(f"{f} family", f"fit results incomplete for {f} ({len(fits[f])}/{len(subjects)} subjects)")

    _section_training(cfg, subjects, rep, adir)
    tasks = [(cfg, s, fam, fits[fam][s.subject_id]) for fam in fams for s in subjects]
    results = _map(_analyze_task, cfg.jobs, tasks)
    by_fam = {fam: [r for r in results if r.family == fam] for fam in fams}
    _section_nll(cfg, subjects, fits, fams, rep, adir)
    _section_trajectories(by_fam, rep, adir)
    _section_rdms(by_fam, rep, adir)
    _section_mds(by_fam, rep, adir)
    _section_noise(by_fam, rep, adir)
    clusters = _section_pca_clusters(cfg, by_fam, rep, adir)
    _section_regression(cfg, subjects, by_fam, clusters, rep, adir)
    atomic_write_text(adir / SUMMARY_FILE, rep.text())
    msg = f"wrote {adir / SUMMARY_FILE}"
    if rep.skipped:
        msg += "\n" + "\n".join(rep.skipped)
    return rep, msg


def _section_training(cfg, subjects, rep, adir):
    rep.h("Training curves")
    rows, series_r, series_l = [], {}, {}
    for fam in cfg.families:
        per = []
        for s in subjects:
            logs = read_epoch_logs(cfg, fam, s.subject_id)
            for lg in logs:
                rows.append((s.subject_id, fam, lg.epoch, lg.mean_loss, lg.mean_reward, lg.mean_return,
                             lg.grad_norm_pre_clip))
            if logs:
                per.append(logs)
        if not per:
            continue
        n = min(len(p) for p in per)
        if n == 0:
            continue
        ep = np.arange(1, n + 1)
        r = np.mean([[lg.mean_reward for lg in p[:n]] for p in per], axis=0)
        loss = np.mean([[lg.mean_loss for lg in p[:n]] for p in per], axis=0)
        series_r[fam] = (ep, smooth(r, cfg.analysis.smooth_window))
        series_l[fam] = (ep, smooth(loss, cfg.analysis.smooth_window))
    if not rows:
        rep.skip("training curves", "no epoch logs found")
        return
    write_csv(adir / "training_curves.csv",
              ("subject", "family", "epoch", "mean_loss", "mean_reward", "mean_return", "grad_norm_pre_clip"),
              rows)
    _write(adir, "training_reward.svg", svgplot.line_chart(series_r, "Training reward (cohort mean, smoothed)",
                                                           "epoch", "squashed reward"))
    _write(adir, "training_loss.svg", svgplot.line_chart(series_l, "Training loss (cohort mean, smoothed)",
                                                         "epoch", "loss"))
    rep.p("Per-epoch logs: `training_curves.csv`.")
    rep.img("training_reward.svg", "training reward")
    rep.img("training_loss.svg", "training loss")


def _section_nll(cfg, subjects, fits, fams, rep, adir):
    rep.h("Model fitting (per-voxel NLL)")
    if not fams:
        rep.skip("model fitting", "no complete fit results")
        return
    rows = [(s.subject_id, fam, fits[fam][s.subject_id].e_star, fits[fam][s.subject_id].frozen_epoch,
             fits[fam][s.subject_id].min_nll) for fam in fams for s in subjects]
    rep.table(("subject", "family", "e*", "frozen epoch", "min NLL"), rows)
    test = paired_nll_test({f: fits[f] for f in fams})
    if test["t"] is not None:
        rep.p(f"Paired t-test on min NLL (NERD minus control): t({test['dof']}) = {test['t']:.4f}, "
              f"p = {test['p']:.4g}.")
    else:
        rep.p(f"Paired t-test not computed: {test.get('note', 'one family only')}.")


def _section_trajectories(by_fam, rep, adir):
    rep.h("Reward across denoising steps (frozen models)")
    if not by_fam:
        rep.skip("reward trajectories", "no frozen models")
        return
    rows, gain_rows, series, bands = [], [], {}, {}
    for fam, res in by_fam.items():
        for r in res:
            for k, (m, sd) in enumerate(zip(r.reward_mean, r.reward_std), start=1):
                rows.append((r.subject_id, fam, k, float(m), float(sd)))
            gain_rows.append((r.subject_id, fam, r.gain_step, r.start_reward, float(r.reward_mean[-1])))
        M = np.mean([r.reward_mean for r in res], axis=0)
        S = np.mean([r.reward_std for r in res], axis=0)
        series[fam] = (np.arange(1, M.size + 1), M)
        bands[fam] = S
    write_csv(adir / "reward_trajectories.csv", ("subject", "family", "step", "mean", "std"), rows)
    write_csv(adir / "gain_steps.csv", ("subject", "family", "step_to_fraction", "start_reward", "final_reward"),
              gain_rows)
    _write(adir, "reward_trajectories.svg",
           svgplot.line_chart(series, "Decoder reward across denoising steps", "step", "raw reward", bands))
    rep.img("reward_trajectories.svg", "reward trajectories")
    summary = []
    for fam, res in by_fam.items():
        steps = [r.gain_step for r in res]
        summary.append((fam, float(np.mean(steps)), int(np.min(steps)), int(np.max(steps))))
    rep.table(("family", "mean step to 90% gain", "min", "max"), summary)
    if "nerd" in by_fam and "control" in by_fam:
        ctrl = {r.subject_id: r.gain_step for r in by_fam["control"]}
        faster = sum(1 for r in by_fam["nerd"] if ctrl[r.subject_id] < r.gain_step)
        rep.p(f"Control reaches 90% of its final reward in fewer steps than NERD for "
              f"{faster} of {len(ctrl)} subjects.")


def _rdm_csv(rdm):
    return csv_text([""] + [str(x) for x in rdm.labels],
                    [[str(lab)] + [float(v) for v in row] for lab, row in zip(rdm.labels, rdm.dist)])


def _section_rdms(by_fam, rep, adir):
    rep.h("Representational dissimilarity")
    if not by_fam:
        rep.skip("RDMs", "no frozen models")
        return
    rep.p("Stepwise RDMs use the first episode of each subject; trial-pair RDMs are emitted for every "
          "step in long format, with heatmaps at the first and last step.")
    for fam, res in by_fam.items():
        for r in res:
            step = stepwise_rdm(r.states[:, 0])
            tag = f"{fam}_{r.subject_id}"
            _write(adir, f"rdm_stepwise_{tag}.csv", _rdm_csv(step))
            _write(adir, f"rdm_stepwise_{tag}.svg", svgplot.heatmap(step.dist, f"Stepwise RDM {fam} {r.subject_id}"))
            long_rows = []
            mats = []
            for k in range(1, r.states.shape[0]):
                tp = correlation_rdm(r.states[k])
                mats.append(tp.dist)
                n = tp.dist.shape[0]
                for i in range(n):
                    for j in range(i + 1, n):
                        long_rows.append((k, i, j, float(tp.dist[i, j])))
            write_csv(adir / f"rdm_trialpair_{tag}.csv", ("step", "trial_i", "trial_j", "dissimilarity"), long_rows)
            _write(adir, f"rdm_trialpair_{tag}_first.svg",
                   svgplot.heatmap(mats[0], f"Trial-pair RDM {fam} {r.subject_id}, step 1"))
            _write(adir, f"rdm_trialpair_{tag}_last.svg",
                   svgplot.heatmap(mats[-1], f"Trial-pair RDM {fam} {r.subject_id}, step {len(mats)}"))
        r0 = res[0]
        rep.img(f"rdm_stepwise_{fam}_{r0.subject_id}.svg", f"stepwise RDM {fam}")
        rep.img(f"rdm_trialpair_{fam}_{r0.subject_id}_last.svg", f"trial-pair RDM {fam}")


def _section_mds(by_fam, rep, adir):
    rep.h("Multidimensional scaling across denoising")
    if not by_fam:
        rep.skip("MDS", "no frozen models")
        return
    for fam, res in by_fam.items():
        rows, pts, groups = [], [], []
        for i, r in enumerate(res):
            states = r.states.mean(axis=1)
            try:
                xy = mds_embed(states, 2)
            except InvalidArgumentError as exc:
                rep.p(f"MDS not computed for {fam} {r.subject_id}: {exc}")
                continue
            for k, (a, b) in enumerate(xy):
                rows.append((r.subject_id, fam, k, float(a), float(b)))
                pts.append((a, b))
                groups.append(i)
        write_csv(adir / f"mds_{fam}.csv", ("subject", "family", "step", "dim1", "dim2"), rows)
        _write(adir, f"mds_{fam}.svg", svgplot.scatter(pts, f"MDS of episode-mean states ({fam})", "dim 1", "dim 2",
                                                     groups=groups))
        rep.img(f"mds_{fam}.svg", f"MDS {fam}")


def _section_noise(by_fam, rep, adir):
    rep.h("Learned noise trajectories")
    if not by_fam:
        rep.skip("noise trajectories", "no frozen models")
        return
    rows, vrows = [], []
    for fam, res in by_fam.items():
        for r in res:
            ts = r.trajset
            for v in range(ts.V):
                vrows.append((r.subject_id, fam, v, int(r.voxel_labels[v])))
                for k in range(ts.T):
                    rows.append((r.subject_id, fam, v, k + 1, float(ts.mu[v, k]), float(ts.sigma[v, k]),
                                 float(ts.mu_star[v, k]), float(ts.sigma_star[v, k]), float(ts.raw_mu[v, k])))
            order = np.argsort(r.voxel_labels, kind="stable")
            _write(adir, f"noise_{fam}_{r.subject_id}.svg",
                   svgplot.heatmap(ts.voxel_features()[order],
                                   f"Normalized mu | sigma by voxel cluster, {fam} {r.subject_id}"))
        rep.img(f"noise_{fam}_{res[0].subject_id}.svg", f"noise trajectories {fam}")
    write_csv(adir / "noise_trajectories.csv",
              ("subject", "family", "voxel", "step", "mu", "sigma", "mu_star", "sigma_star", "raw_mu"), rows)
    write_csv(adir / "voxel_clusters.csv", ("subject", "family", "voxel", "cluster"), vrows)
    rep.p("`mu` is the state change mu_theta(x_t, t) - x_t; `raw_mu` is mu_theta itself.")


def _section_pca_clusters(cfg, by_fam, rep, adir):
    rep.h("Two-stage PCA and subject clusters")
    clusters = {}
    if not by_fam:
        rep.skip("PCA", "no frozen models")
        return clusters
    vrows, prows, crows, summary = [], [], [], []
    for fam, res in by_fam.items():
        trajs = align_signs([r.trajectory for r in res])
        for t in trajs:
            for c, ratio in enumerate(t.explained_variance_ratio, start=1):
                vrows.append((t.subject_id, fam, c, float(ratio)))
            for k, row in enumerate(t.pc_path, start=1):
                prows.append((t.subject_id, fam, k, *[float(v) for v in row]))
        ratios = np.array([t.explained_variance_ratio for t in trajs])
        summary.append((fam, *[f"{m:.3f} ± {s:.3f}" for m, s in zip(ratios.mean(0), ratios.std(0))]))
        series = {t.subject_id: (np.arange(1, t.pc_path.shape[0] + 1), t.pc_path[:, 0]) for t in trajs}
        _write(adir, f"pca_paths_{fam}.svg", svgplot.line_chart(series, f"PC1 path by subject ({fam})", "step", "PC1"))
        rep.img(f"pca_paths_{fam}.svg", f"PC1 paths {fam}")
        rdm = subject_trajectory_rdm(trajs)
        _write(adir, f"rdm_trajectory_{fam}.csv", _rdm_csv(rdm))
        _write(adir, f"rdm_trajectory_{fam}.svg", svgplot.heatmap(rdm.dist, f"Trajectory RDM ({fam})",
                                                                 rdm.labels, rdm.labels))
        labels = cluster_subjects(rdm, cfg.analysis.subject_k)
        clusters[fam] = {t.subject_id: int(lab) + 1 for t, lab in zip(trajs, labels)}
        for t, lab in zip(trajs, labels):
            crows.append((t.subject_id, fam, int(lab) + 1))
        if len(trajs) >= 2:
            _write(adir, f"dendrogram_{fam}.svg",
                   svgplot.dendrogram(linkage_tree(rdm.dist), rdm.labels, f"Subject clusters ({fam})"))
            rep.img(f"dendrogram_{fam}.svg", f"dendrogram {fam}")
    ncomp = max(len(s) - 1 for s in summary)
    rep.table(("family",) + tuple(f"PC{i} ratio" for i in range(1, ncomp + 1)),
              [s + ("",) * (ncomp + 1 - len(s)) for s in summary])
    write_csv(adir / "pca_variance.csv", ("subject", "family", "pc", "ratio"), vrows)
    ncols = max(len(r) for r in prows) - 3
    write_csv(adir / "pca_paths.csv", ("subject", "family", "step") + tuple(f"pc{i}" for i in range(1, ncols + 1)),
              prows)
    write_csv(adir / "clusters.csv", ("subject", "family", "cluster"), crows)
    return clusters


def _section_regression(cfg, subjects, by_fam, clusters, rep, adir):
    rep.h("Predicting human reward from model reward")
    human = {s.subject_id: s.mean_achieved_reward for s in subjects}
    if not by_fam:
        rep.skip("regression", "no frozen models")
        return
    if len(subjects) < 3:
        rep.p(f"Not applicable: regression needs at least 3 subjects, this run has {len(subjects)}.")
        return
    rows, r2rows, r2 = [], [], {}
    for fam, res in by_fam.items():
        ids = [r.subject_id for r in res]
        y = np.array([human[i] for i in ids])
        x = np.array([r.model_reward for r in res])
        fit = fit_reward_model(y, x)
        for term, b, se, t, p in fit.rows():
            rows.append((fam, "simple", term, b, se, t, p))
        r2[(fam, "simple")] = fit.r_squared
        r2rows.append((fam, "simple", fit.r_squared, len(ids)))
        g = [clusters[fam][i] for i in ids]
        _write(adir, f"regression_{fam}.svg",
               svgplot.scatter(np.column_stack([x, y]), f"Human vs model reward ({fam}), R2 = {fit.r_squared:.3f}",
                               "model mean reward", "human mean reward",
                               fit_line=(fit.coefficients[0], fit.coefficients[1]), labels=ids,
                               groups=[c - 1 for c in g]))
        rep.img(f"regression_{fam}.svg", f"regression {fam}")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                cfit = fit_reward_model_with_clusters(y, x, g)
            except (InsufficientDataError, SingularDesignError) as exc:
                cfit = None
                rep.p(f"Cluster model for {fam} not estimable: {exc}")
        for w in caught:
            rep.p(f"Note ({fam}): {w.message}")
        if cfit is not None:
            for term, b, se, t, p in cfit.rows():
                rows.append((fam, "clusters", term, b, se, t, p))
            r2[(fam, "clusters")] = cfit.r_squared
            r2rows.append((fam, "clusters", cfit.r_squared, len(ids)))
    write_csv(adir / "regression_summary.csv", ("family", "model", "term", "beta", "std_error", "t", "p_value"), rows)
    write_csv(adir / "regression_fit.csv", ("family", "model", "r_squared", "n_subjects"), r2rows)
    for fam in by_fam:
        for model, formula in (("simple", "y ~ x1"), ("clusters", "y ~ x1 * x2")):
            trows = [(term, b, p) for f, m, term, b, _, _, p in rows if f == fam and m == model]
            if trows:
                rep.p(f"**{fam}** ({formula}), R2 = {r2[(fam, model)]:.4f}")
                rep.table(("term", "beta", "p-value"), trows)
    if ("nerd", "simple") in r2 and ("control", "simple") in r2:
        a, b = r2[("nerd", "simple")], r2[("control", "simple")]
        rel = ">" if a > b else ("<" if a < b else "=")
        line = f"R2 ordering (model reward only): NERD {a:.4f} {rel} control {b:.4f}."
        if ("nerd", "clusters") in r2 and ("control", "clusters") in r2:
            a2, b2 = r2[("nerd", "clusters")], r2[("control", "clusters")]
            rel2 = ">" if a2 > b2 else ("<" if a2 < b2 else "=")
            line += f"  With clusters: NERD {a2:.4f} {rel2} control {b2:.4f}."
        rep.p(line)


# ------------------------------------------------------------------- report

def cmd_report(cfg):
    """Write ``index.md`` listing every artifact under ``out_dir`` with its checksum."""
    root = Path(cfg.out_dir)
    files = []
    if root.exists():
        files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != INDEX_FILE
                       and not p.name.startswith("."))
    lines = ["# NERD lab artifact index", ""]
    cfg_file = root / CONFIG_FILE
    if cfg_file.exists():
        try:
            from .config import config_from_dict

            run = config_from_dict(json.loads(cfg_file.read_text(encoding="utf-8")))
            lines += [f"Configuration hash: {run.hash()}; seed: {run.seed}.", ""]
        except (InvalidArgumentError, json.JSONDecodeError) as exc:
            lines += [f"Configuration file present but unreadable: {exc}", ""]
    msg = f"indexed {len(files)} files"
    if not files:
        warnings.warn(f"no artifacts found under {root}", stacklevel=2)
        lines += ["No artifacts found.", ""]
        msg = f"warning: no artifacts found under {root}"
    groups = {}
    for p in files:
        rel = p.relative_to(root)
        groups.setdefault(rel.parts[0] if len(rel.parts) > 1 else ".", []).append(rel)
    for g in sorted(groups):
        lines += [f"## {g}", "", "| file | bytes | sha256 |", "|---|---|---|"]
        for rel in groups[g]:
            p = root / rel
            lines.append(f"| {rel.as_posix()} | {p.stat().st_size} | {file_sha256(p)[:16]} |")
        lines.append("")
    root.mkdir(parents=True, exist_ok=True)
    atomic_write_text(root / INDEX_FILE, "\n".join(lines).rstrip("\n") + "\n")
    return files, msg
