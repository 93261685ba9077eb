"""Large-scale impersonation study: bin victims by original distance, attack
every eligible (attacker, victim) pair, and aggregate success rates.

Victims whose original distance is at or below the decision threshold are
skipped (the model already matches them), as are victims beyond the last
bin's upper edge (too far to be worth attacking). Completed pairs are
checkpointed as JSON lines so interrupted runs resume without recomputing;
the final report is assembled from the checkpoint in victim order, which
makes an interrupted-then-resumed run byte-identical to an uninterrupted one.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import AttackConfig, run_attack
from .image import ImageIOError, load_image
from .oracle import Embedding, distance
from .validation import ValidationError, check_positive

__all__ = [
    "DEFAULT_BINS",
    "StudyConfig",
    "run_study",
    "radiated_power",
    "report_schema",
    "write_csv_summary",
]

DEFAULT_BINS = ((1.242, 1.4), (1.4, 1.55), (1.55, 1.7))
HISTOGRAM_BIN_WIDTH = 0.02


@dataclass(frozen=True)
class StudyConfig:
    attackers: tuple[str, ...]
    victim_dir: str
    bins: tuple[tuple[float, float], ...] = DEFAULT_BINS
    attack: AttackConfig = field(default_factory=AttackConfig)
    out_path: str | None = None
    checkpoint_path: str | None = None
    jobs: int = 1

    def validate(self) -> None:
        if len(self.attackers) < 1:
            raise ValidationError("need at least one attacker image", field="attackers")
        prev_hi = None
        for lo, hi in self.bins:
            if not lo < hi:
                raise ValidationError(f"bin ({lo}, {hi}] is empty", field="bins")
            if prev_hi is not None and lo < prev_hi:
                raise ValidationError("bins must be disjoint and ascending", field="bins")
            prev_hi = hi
        if self.bins and self.bins[0][0] < self.attack.threshold:
            raise ValidationError(
                f"first bin must start at or above the threshold "
                f"{self.attack.threshold}", field="bins")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1", field="jobs")
        self.attack.validate()


def _find_bin(bins, value: float) -> int | None:
    for i, (lo, hi) in enumerate(bins):
        if lo < value <= hi:
            return i
    return None


def _pair_seed(base_seed: int, attacker_id: str, victim_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{attacker_id}:{victim_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**31)


def _histogram(values, width: float = HISTOGRAM_BIN_WIDTH) -> dict:
    if not values:
        return {"width": width, "start": 0.0, "counts": []}
    lo = math.floor(min(values) / width) * width
    hi = max(values)
    n_bins = max(1, int(math.ceil((hi - lo) / width + 1e-12)))
    counts = [0] * n_bins
    for v in values:
        idx = min(int((v - lo) / width), n_bins - 1)
        counts[idx] += 1
    return {"width": width, "start": lo, "counts": counts}


def run_study(cfg: StudyConfig, oracle, *, progress=None) -> dict:
    """Run the full study and return the report dict (also written to
    ``cfg.out_path`` when set). Deterministic given the attack seed: per-pair
    seeds derive from a stable hash of the pair's file names.
    """
    cfg.validate()
    victim_dir = Path(cfg.victim_dir)
    if not victim_dir.is_dir():
        raise ValidationError(f"victim directory not found: {victim_dir}",
                              field="victim_dir")

    attackers: dict[str, np.ndarray] = {}
    for path in cfg.attackers:
        attackers[Path(path).name] = load_image(path)

    victims: dict[str, np.ndarray] = {}
    unreadable = 0
    for path in sorted(victim_dir.iterdir()):
        if path.suffix.lower() not in (".png", ".ppm", ".pnm"):
            continue
        try:
            victims[path.name] = load_image(path)
        except ImageIOError:
            unreadable += 1

    attacker_embs = {name: oracle.embed(img) for name, img in attackers.items()}
    victim_embs = {name: oracle.embed(img) for name, img in victims.items()}

    # Pair selection: bin by original distance; record skips.
    pairs = []  # (attacker_name, victim_name, original, bin_index)
    skipped = {"below_threshold": 0, "beyond_last_bin": 0, "outside_bins": 0}
    for a_name, a_emb in sorted(attacker_embs.items()):
        for v_name, v_emb in sorted(victim_embs.items()):
            original = distance(a_emb, v_emb)
            if original <= cfg.attack.threshold:
                skipped["below_threshold"] += 1
                continue
            if original > cfg.bins[-1][1]:
                skipped["beyond_last_bin"] += 1
                continue
            bin_idx = _find_bin(cfg.bins, original)
            if bin_idx is None:
                skipped["outside_bins"] += 1
                continue
            pairs.append((a_name, v_name, original, bin_idx))

    # Checkpoint: one JSON line per completed pair, keyed by (attacker, victim).
    done: dict[tuple[str, str], dict] = {}
    ckpt_path = Path(cfg.checkpoint_path) if cfg.checkpoint_path else None
    if ckpt_path and ckpt_path.exists():
        for line in ckpt_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            done[(rec["attacker"], rec["victim"])] = rec

    def attack_pair(pair):
        a_name, v_name, original, bin_idx = pair
        seed = _pair_seed(cfg.attack.seed, a_name, v_name)
        pair_cfg = replace(cfg.attack, seed=seed)
        result = run_attack(attackers[a_name], None, pair_cfg, oracle,
                            victim_emb=victim_embs[v_name])
        return {
            "attacker": a_name,
            "victim": v_name,
            "bin": bin_idx,
            "original_distance": original,
            "final_distance": result.best_distance,
            "drop": original - result.best_distance,
            "success": result.success,
            "seed": seed,
        }

    todo = [p for p in pairs if (p[0], p[1]) not in done]
    ckpt_file = None
    if ckpt_path:
        ckpt_path.parent.mkdir(parents=True, exist_ok=True)
        ckpt_file = ckpt_path.open("a")
    try:
        if cfg.jobs == 1:
            for pair in todo:
                rec = attack_pair(pair)
                done[(rec["attacker"], rec["victim"])] = rec
                if ckpt_file:
                    ckpt_file.write(json.dumps(rec, sort_keys=True) + "\n")
                    ckpt_file.flush()
                if progress:
                    progress(rec)
        else:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                for rec in pool.map(attack_pair, todo):
                    done[(rec["attacker"], rec["victim"])] = rec
                    if ckpt_file:
                        ckpt_file.write(json.dumps(rec, sort_keys=True) + "\n")
                        ckpt_file.flush()
                    if progress:
                        progress(rec)
    finally:
        if ckpt_file:
            ckpt_file.close()

    # Assemble the report in stable (attacker, victim) order.
    records = [done[(a, v)] for a, v, _, _ in pairs]
    per_attacker = {}
    for a_name in sorted(attackers):
        a_records = [r for r in records if r["attacker"] == a_name]
        bins_out = []
        for i, (lo, hi) in enumerate(cfg.bins):
            in_bin = [r for r in a_records if r["bin"] == i]
            n_success = sum(1 for r in in_bin if r["success"])
            bins_out.append({
                "lo": lo,
                "hi": hi,
                "n_victims": len(in_bin),
                "n_success": n_success,
                "success_rate": (n_success / len(in_bin)) if in_bin else None,
            })
        per_attacker[a_name] = {
            "bins": bins_out,
            "mean_drop": (float(np.mean([r["drop"] for r in a_records]))
                          if a_records else None),
            "final_distance_histogram": _histogram(
                [r["final_distance"] for r in a_records]),
        }

    report = {
        "bins": [[lo, hi] for lo, hi in cfg.bins],
        "threshold": cfg.attack.threshold,
        "seed": cfg.attack.seed,
        "n_attackers": len(attackers),
        "n_victims": len(victims),
        "unreadable_victims": unreadable,
        "skipped": skipped,
        "attackers": per_attacker,
        "records": records,
    }
    if cfg.out_path:
        Path(cfg.out_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def write_csv_summary(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attacker", "bin_lo", "bin_hi", "n_victims",
                         "n_success", "success_rate"])
        for a_name in sorted(report["attackers"]):
            for b in report["attackers"][a_name]["bins"]:
                writer.writerow([a_name, b["lo"], b["hi"], b["n_victims"],
                                 b["n_success"],
                                 "" if b["success_rate"] is None else b["success_rate"]])


def radiated_power(p_led: float, eta: float, r: float) -> float:
    """Peak irradiance of one LED on the face: eta * p_led / (pi * r^2), in W/m^2."""
    check_positive(p_led, "p_led")
    check_positive(r, "r")
    eta = float(eta)
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"eta must be in (0, 1], got {eta}", field="eta")
    return eta * p_led / (math.pi * r * r)


def report_schema() -> dict:
    """JSON schema the study report validates against (shipped with the package)."""
    schema_path = Path(__file__).parent / "schemas" / "study_report.schema.json"
    return json.loads(schema_path.read_text())
