"""Three-phase experiment pipeline: estimate the uncertainty set, train, test."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from chart_generator import write_test_panels, write_training_panels
from config import PACKAGE_VERSION, CacheMismatchError, ConfigError, ExperimentConfig, PipelineError
from diff_net import DiffNet
from environments import collect_random_episodes, domain_support, make_environment, outcome_count
from evaluation import RunReport, build_test_grids, run_test_suite, summarize
from merkle_tree import MerkleTree, file_digest
from run_ledger import RunLedger
from trainer import Algorithm, run_training
from uncertainty_set import UNCERTAINTY_SET_VERSION, UncertaintySet, build_uncertainty_set

logger = logging.getLogger(__name__)

PHASES = ("estimate", "train", "test")
EXTRA_PHASES = ("report", "verify")
MANIFEST_VERSION = 1
LOCK_NAME = ".rcpg.lock"
ESTIMATION_STREAM = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CACHE = 3
EXIT_RUNTIME = 4


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, CacheMismatchError):
        return EXIT_CACHE
    return EXIT_RUNTIME


def _sha256_json(data: Any) -> str:
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


@contextmanager
def run_lock(out_dir: str):
    """Exclusive lock file for one output directory."""
    path = os.path.join(out_dir, LOCK_NAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise PipelineError(f"{path} exists: another run is writing to {out_dir} "
                            f"(delete the lock file if that run is gone)") from e
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        if os.path.exists(path):
            os.remove(path)


def _train_worker(config_data: Dict[str, Any], algorithm: str, seed: int,
                  cache_dir: str, out_dir: str, run_hash: str) -> Dict[str, Any]:
    cfg = ExperimentConfig.model_validate(config_data)
    uset, _ = UncertaintySet.load(cache_dir)
    env = make_environment(cfg.domain, cfg.inventory_states, cfg.cell_tables)
    result = run_training(cfg.trainer_config(Algorithm(algorithm), seed), env.rcmdp, uset.nominal, uset)

    name = f"{algorithm}_seed{seed}"
    checkpoint = os.path.join("checkpoints", f"{name}.dnet")
    metrics = os.path.join("training", f"{name}.csv")
    result.policy.save(os.path.join(out_dir, checkpoint))
    result.metrics.to_csv(os.path.join(out_dir, metrics), index=False, float_format="%.10g")
    entry = {
        "algorithm": algorithm,
        "seed": seed,
        "run_hash": run_hash,
        "checkpoint": checkpoint.replace(os.sep, "/"),
        "digest": file_digest(os.path.join(out_dir, checkpoint)),
        "metrics": metrics.replace(os.sep, "/"),
        "final_lambda": result.lagrange.multiplier,
        "final_lambda_adv": result.lagrange.adversary_multiplier,
    }
    if result.pretrain is not None:
        entry["pretrain_converged"] = result.pretrain.converged
        entry["pretrain_mae"] = result.pretrain.final_mae
    return entry


class Pipeline:
    """Runs the phases for one resolved experiment config inside its output directory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg.resolved()
        self.out_dir = os.path.abspath(self.cfg.output_dir)
        self.cache_dir = os.path.join(self.out_dir, "cache", "uncertainty_set")
        self.ledger: Optional[RunLedger] = None
        self.trained_now = False

    # bookkeeping -----------------------------------------------------------

    def _prepare(self):
        try:
            for sub in ("", "cache", "checkpoints", "training", "charts"):
                os.makedirs(os.path.join(self.out_dir, sub), exist_ok=True)
        except OSError as e:
            raise PipelineError(f"cannot write to output directory {self.out_dir}: {e}") from e
        self.ledger = RunLedger(os.path.join(self.out_dir, "ledger.json"))
        report = self.ledger.validate_chain()
        if not report["is_valid"]:
            raise CacheMismatchError(f"run ledger is corrupt: {'; '.join(report['errors'])}")

    def cache_key(self) -> str:
        return _sha256_json({**self.cfg.estimation_params(), "version": UNCERTAINTY_SET_VERSION})

    def run_hash(self, algorithm: Algorithm, seed: int) -> str:
        trainer_cfg = self.cfg.trainer_config(algorithm, seed)
        return _sha256_json({"cache_key": self.cache_key(), "trainer": trainer_cfg.model_dump(mode="json")})

    def _artifacts(self) -> Dict[str, str]:
        artifacts = {}
        for root, _, files in os.walk(self.out_dir):
            for name in files:
                if name in (LOCK_NAME, "manifest.json") or name.endswith(".tmp"):
                    continue
                path = os.path.join(root, name)
                rel = os.path.relpath(path, self.out_dir).replace(os.sep, "/")
                artifacts[rel] = file_digest(path)
        return dict(sorted(artifacts.items()))

    def write_manifest(self) -> Dict[str, Any]:
        artifacts = self._artifacts()
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "package_version": PACKAGE_VERSION,
            "numpy_version": np.__version__,
            "config_hash": self.cfg.config_hash(),
            "config": json.loads(self.cfg.canonical_json()),
            "seeds": list(self.cfg.seeds),
            "algorithms": [a.value for a in self.cfg.algorithms],
            "ledger_head": self.ledger.head if self.ledger else None,
            "artifacts": artifacts,
            "artifact_root": MerkleTree(artifacts).get_root(),
        }
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        return manifest

    def read_manifest(self) -> Optional[Dict[str, Any]]:
        path = os.path.join(self.out_dir, "manifest.json")
        if not os.path.exists(path):
            return None
        try:
            with open(path) as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise CacheMismatchError(f"unreadable manifest {path}: {e}") from e

    def unverified_artifacts(self, manifest: Dict[str, Any], paths: Iterable[str]) -> List[str]:
        """Paths whose current digest is not included under the manifest's artifact root."""
        tree = MerkleTree(manifest.get("artifacts", {}))
        root = manifest.get("artifact_root", "")
        if tree.get_root() != root:
            raise CacheMismatchError("manifest artifact list does not hash to its artifact_root")
        failed = []
        for rel in paths:
            path = os.path.join(self.out_dir, rel)
            if not os.path.exists(path) or not MerkleTree.verify_proof(rel, file_digest(path),
                                                                        tree.get_proof(rel), root):
                failed.append(rel)
        return failed

    # phases ----------------------------------------------------------------

    def estimate(self) -> UncertaintySet:
        """Phase 1: random-policy data on P_data, nominal model and Hoeffding budgets (cached)."""
        key = self.cache_key()
        if os.path.exists(os.path.join(self.cache_dir, "nominal.npz")):
            try:
                uset, stored_key = UncertaintySet.load(self.cache_dir)
            except (ValueError, KeyError) as e:
                raise CacheMismatchError(f"unusable uncertainty-set cache in {self.cache_dir}: {e}") from e
            if stored_key != key:
                raise CacheMismatchError(
                    f"uncertainty-set cache in {self.cache_dir} was built from other phase-1 settings; "
                    f"remove it or choose another output directory"
                )
            logger.info(f"Uncertainty-set cache hit ({self.cache_dir})")
            return uset

        logger.info(f"Estimating the uncertainty set for {self.cfg.domain} "
                    f"from {self.cfg.estimation_episodes} episodes")
        env = make_environment(self.cfg.domain, self.cfg.inventory_states, self.cfg.cell_tables)
        rng = np.random.default_rng([self.cfg.base_seed, ESTIMATION_STREAM])
        episodes = collect_random_episodes(env, self.cfg.estimation_episodes, rng)
        rcmdp = env.rcmdp
        uset = build_uncertainty_set(
            episodes, rcmdp.n_states, rcmdp.n_actions,
            domain_support(self.cfg.domain, self.cfg.inventory_states), self.cfg.delta,
            outcome_count(self.cfg.domain, self.cfg.inventory_states),
        )
        uset.save(self.cache_dir, key)
        self.ledger.append("estimate", {
            "cache_key": key,
            "episodes": self.cfg.estimation_episodes,
            "transitions": int(sum(len(t) for t in episodes)),
            "alpha_min": float(uset.budget.min()),
            "alpha_max": float(uset.budget.max()),
        })
        return uset

    def _completed(self, algorithm: Algorithm, seed: int) -> bool:
        entry = self.ledger.latest("train", algorithm=algorithm.value, seed=seed,
                                   run_hash=self.run_hash(algorithm, seed))
        if entry is None:
            return False
        path = os.path.join(self.out_dir, entry["data"]["checkpoint"])
        return os.path.exists(path) and file_digest(path) == entry["data"]["digest"]

    def train(self) -> List[Dict[str, Any]]:
        """Phase 2: every (algorithm, seed) pair not already recorded in the ledger."""
        self.estimate()
        pairs = [(a, s) for a in self.cfg.algorithms for s in self.cfg.seeds]
        pending = [(a, s) for a, s in pairs if not self._completed(a, s)]
        if len(pending) < len(pairs):
            logger.info(f"Skipping {len(pairs) - len(pending)} trained (algorithm, seed) pairs")
        if not pending:
            return []
        logger.info(f"Training {len(pending)} (algorithm, seed) pairs with {self.cfg.jobs} job(s)")
        config_data = self.cfg.model_dump(mode="json")
        entries = []
        # ledger entries land as each run finishes, so an interrupted phase keeps them
        for entry in Parallel(n_jobs=self.cfg.jobs, return_as="generator")(
            delayed(_train_worker)(config_data, a.value, s, self.cache_dir, self.out_dir, self.run_hash(a, s))
            for a, s in pending
        ):
            self.ledger.append("train", entry)
            self.trained_now = True
            entries.append(entry)
            logger.info(f"Trained {entry['algorithm']} seed {entry['seed']}: "
                        f"final lambda {entry['final_lambda']:.3f}")
        return entries

    def _checkpoint_path(self, algorithm: Algorithm, seed: int) -> str:
        return os.path.join(self.out_dir, "checkpoints", f"{algorithm.value}_seed{seed}.dnet")

    def verify_snapshots(self):
        """Check reused checkpoints against the last manifest before testing them."""
        manifest = self.read_manifest()
        if manifest is None or self.trained_now:
            return
        listed = manifest.get("artifacts", {})
        paths = [f"checkpoints/{a.value}_seed{s}.dnet" for a in self.cfg.algorithms for s in self.cfg.seeds]
        failed = self.unverified_artifacts(manifest, [p for p in paths if p in listed])
        if failed:
            raise CacheMismatchError(f"checkpoints changed since the last manifest: {', '.join(failed)}")

    def load_policies(self) -> Dict[str, Dict[int, DiffNet]]:
        policies: Dict[str, Dict[int, DiffNet]] = {}
        for algorithm in self.cfg.algorithms:
            policies[algorithm.value] = {}
            for seed in self.cfg.seeds:
                path = self._checkpoint_path(algorithm, seed)
                if not os.path.exists(path):
                    raise PipelineError(f"missing snapshot {path}; run the train phase first")
                try:
                    policies[algorithm.value][seed] = DiffNet.load(path)
                except ValueError as e:
                    raise CacheMismatchError(f"unreadable snapshot {path}: {e}") from e
        return policies

    def _training_frames(self) -> Dict[Tuple[str, int], pd.DataFrame]:
        frames = {}
        for algorithm in self.cfg.algorithms:
            for seed in self.cfg.seeds:
                path = os.path.join(self.out_dir, "training", f"{algorithm.value}_seed{seed}.csv")
                if os.path.exists(path):
                    frames[(algorithm.value, seed)] = pd.read_csv(path)
        return frames

    def _charts(self, report: RunReport):
        chart_dir = os.path.join(self.out_dir, "charts")
        write_test_panels(report.summary, chart_dir)
        write_training_panels(self._training_frames(), self.cfg.domain, chart_dir)

    def test(self) -> RunReport:
        """Phase 3: greedy rollouts of every snapshot on the perturbation tests."""
        self.verify_snapshots()
        policies = self.load_policies()
        grids = build_test_grids(self.cfg.domain, self.cfg.inventory_states, self.cfg.runs_per_setting)
        report = run_test_suite(policies, grids, self.cfg.inventory_states, self.cfg.base_seed,
                                self.cfg.jobs, self.cfg.cell_tables)
        report.notes.append(f"config_hash {self.cfg.config_hash()}")
        results_path, summary_path = report.write(self.out_dir)
        self._charts(report)
        self.ledger.append("test", {
            "results_digest": file_digest(results_path),
            "summary_digest": file_digest(summary_path),
            "rollouts": int(len(report.results)),
        })
        return report

    def report(self) -> RunReport:
        """Recompute summary.csv and charts from results.csv and the training metric files."""
        results_path = os.path.join(self.out_dir, "results.csv")
        if not os.path.exists(results_path):
            raise PipelineError(f"{results_path} not found; run the test phase first")
        results = pd.read_csv(results_path, dtype={"param_value": str})
        report = RunReport(results=results, summary=summarize(results))
        report.notes.append(f"config_hash {self.cfg.config_hash()}")
        report.write_summary(self.out_dir)
        self._charts(report)
        return report

    def verify(self) -> List[str]:
        """Check every artifact listed in manifest.json against its Merkle root."""
        manifest = self.read_manifest()
        if manifest is None:
            raise PipelineError(f"no manifest.json in {self.out_dir}; nothing to verify")
        artifacts = list(manifest.get("artifacts", {}))
        failed = self.unverified_artifacts(manifest, artifacts)
        if failed:
            raise CacheMismatchError(f"artifacts changed since the manifest was written: {', '.join(failed)}")
        logger.info(f"Verified {len(artifacts)} artifacts against root {manifest['artifact_root'][:12]}")
        return artifacts

    def run(self, phases: Iterable[str] = PHASES):
        phases = list(phases)
        unknown = [p for p in phases if p not in PHASES + EXTRA_PHASES]
        if unknown:
            raise ValueError(f"unknown phases {unknown}")
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as e:
            raise PipelineError(f"cannot create output directory {self.out_dir}: {e}") from e
        with run_lock(self.out_dir):
            self._prepare()
            for phase in phases:
                logger.info(f"Phase {phase} started")
                getattr(self, phase)()
                logger.info(f"Phase {phase} finished")
            self.write_manifest()


def run_pipeline(cfg: ExperimentConfig, phases: Iterable[str] = PHASES) -> int:
    """Run the requested phases; returns the process exit status."""
    try:
        Pipeline(cfg).run(phases)
    except (ConfigError, CacheMismatchError, PipelineError) as e:
        logger.error(str(e))
        return exit_code_for(e)
    except Exception as e:
        logger.error(f"Pipeline failed: {e}")
        return EXIT_RUNTIME
    return EXIT_OK
