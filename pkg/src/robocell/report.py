"""Per-job report directory: raw episode log, derived statistics, relabels.

Layout under <root>/<job_id>/:
    meta.json        job summary and accounting parameters
    episodes.jsonl   append-only raw episode log (with step logs)
    relabels.jsonl   manual success relabels, applied in order
    report.json      derived report, regenerated deterministically
    frames/          optional schematic first/final frames per episode

report.json is always recomputable from the other files; relabeling an
episode rewrites it from scratch.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .core.types import EpisodeRecord, EvaluationJob, StepPhase, VerdictLabel
from .metrics import human_time_saved, success_rate, throughput


class ReportError(Exception):
    pass


class UnknownReport(ReportError):
    pass


class UnknownEpisode(ReportError):
    pass


class InvalidLabel(ReportError):
    pass


# Report accounting defaults: one operator-minute per intervention, two
# minutes of hands-on time per trial if a human ran the evaluation instead.
MINUTES_PER_INTERVENTION = 1.0
MANUAL_MINUTES_PER_TRIAL = 2.0


class ReportStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def job_dir(self, job_id: str) -> Path:
        return self.root / job_id

    def frames_dir(self, job_id: str) -> Path:
        return self.job_dir(job_id) / "frames"

    def report_path(self, job_id: str) -> Path:
        return self.job_dir(job_id) / "report.json"

    # -- writing ------------------------------------------------------------

    def finalize(self, job: EvaluationJob, result, interventions=None) -> dict:
        """Persist a finished (or canceled/failed) job and build its report."""
        d = self.job_dir(job.job_id)
        d.mkdir(parents=True, exist_ok=True)
        meta = job.summary_dict()
        meta["interventions"] = [t.to_dict() for t in (interventions or [])]
        meta["motor_failure_reruns"] = getattr(result, "motor_failure_reruns", 0)
        meta["total_reset_steps"] = getattr(result, "total_reset_steps", 0)
        meta["error"] = getattr(result, "error", None)
        meta["minutes_per_intervention"] = MINUTES_PER_INTERVENTION
        meta["manual_minutes_per_trial"] = MANUAL_MINUTES_PER_TRIAL
        (d / "meta.json").write_text(json.dumps(meta, indent=2))
        with open(d / "episodes.jsonl", "w") as fh:
            for episode in job.episodes:
                fh.write(json.dumps(episode.to_dict()) + "\n")
        (d / "relabels.jsonl").touch()
        return self.rebuild(job.job_id)

    # -- reading ------------------------------------------------------------

    def _load(self, job_id: str):
        d = self.job_dir(job_id)
        if not (d / "meta.json").exists():
            raise UnknownReport(job_id)
        meta = json.loads((d / "meta.json").read_text())
        episodes = []
        path = d / "episodes.jsonl"
        if path.exists():
            with open(path) as fh:
                for line in fh:
                    if line.strip():
                        episodes.append(EpisodeRecord.from_dict(json.loads(line)))
        relabels = []
        rpath = d / "relabels.jsonl"
        if rpath.exists():
            with open(rpath) as fh:
                for line in fh:
                    if line.strip():
                        relabels.append(json.loads(line))
        return meta, episodes, relabels

    def read_report(self, job_id: str) -> dict:
        path = self.report_path(job_id)
        if not path.exists():
            raise UnknownReport(job_id)
        return json.loads(path.read_text())

    # -- derived statistics ----------------------------------------------------

    def rebuild(self, job_id: str) -> dict:
        """Recompute report.json from the raw logs; deterministic and
        idempotent."""
        meta, episodes, relabels = self._load(job_id)
        by_index = {e.index: e for e in episodes}
        for entry in relabels:
            episode = by_index.get(entry["episode_index"])
            if episode is not None:
                episode.success_verdict = VerdictLabel(entry["new_label"])

        valid = [e for e in episodes if e.valid]
        table = []
        for e in episodes:
            table.append(
                {
                    "index": e.index,
                    "outcome": e.success_verdict.value if e.success_verdict else None,
                    "valid": e.valid,
                    "invalid_reason": e.invalid_reason,
                    "rerun_of": e.rerun_of,
                    "eval_steps": e.eval_steps(),
                    "reset_steps": e.reset_steps(),
                    "reset_attempts": e.reset_attempts,
                    "motor_failures": e.motor_failures,
                    "wall_time_s": e.wall_time_s,
                    "policy_latency_ms": e.policy_latency_ms,
                    "initial_state": e.initial_state_summary,
                    "final_state": e.final_state_summary,
                }
            )

        report: dict = {
            "job": meta,
            "episodes": table,
            "relabels": relabels,
        }
        if valid:
            report["success_rate"] = success_rate(episodes)
        else:
            report["success_rate"] = None

        started, finished = meta.get("started_at"), meta.get("finished_at")
        if started and finished and finished > started:
            window_minutes = (finished - started) / 60.0
            report["throughput_steps_per_min"] = throughput(episodes, window_minutes)
            report["window_minutes"] = window_minutes
        else:
            report["throughput_steps_per_min"] = None

        interventions = meta.get("interventions", [])
        report["intervention_count"] = len(interventions)
        report["motor_failure_reruns"] = meta.get("motor_failure_reruns", 0)
        report["human_time_saved"] = human_time_saved(
            len(interventions),
            meta.get("minutes_per_intervention", MINUTES_PER_INTERVENTION),
            meta.get("manual_minutes_per_trial", MANUAL_MINUTES_PER_TRIAL) * meta.get("num_trials", 0),
        )

        frames = self.frames_dir(job_id)
        if frames.is_dir():
            report["frames"] = sorted(p.name for p in frames.glob("*.png"))
        else:
            report["frames"] = []

        self.report_path(job_id).write_text(json.dumps(report, indent=2))
        return report

    # -- relabeling ---------------------------------------------------------------

    def relabel_episode(
        self, job_id: str, episode_index: int, new_label: str, annotator: str
    ) -> dict:
        """Override one valid episode's verdict (audit-logged) and recompute
        every derived statistic."""
        try:
            label = VerdictLabel(new_label)
        except ValueError:
            raise InvalidLabel(f"unknown label {new_label!r}") from None
        if label == VerdictLabel.INVALID:
            raise InvalidLabel("relabeling can only assign success or failure")
        meta, episodes, relabels = self._load(job_id)
        by_index = {e.index: e for e in episodes}
        if episode_index not in by_index:
            raise UnknownEpisode(f"job {job_id} has no episode {episode_index}")
        episode = by_index[episode_index]
        if not episode.valid:
            raise InvalidLabel(f"episode {episode_index} is invalid and never scored")
        # Old label reflects prior relabels, if any.
        current = episode.success_verdict.value if episode.success_verdict else None
        for entry in relabels:
            if entry["episode_index"] == episode_index:
                current = entry["new_label"]
        entry = {
            "episode_index": episode_index,
            "old_label": current,
            "new_label": label.value,
            "annotator": annotator,
            "timestamp": time.time(),
        }
        with open(self.job_dir(job_id) / "relabels.jsonl", "a") as fh:
            fh.write(json.dumps(entry) + "\n")
        return self.rebuild(job_id)

    def list_jobs(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "meta.json").exists())
