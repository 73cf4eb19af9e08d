"""Integration tests: forge a dataset, roll out, score, export and evaluate.

Everything runs offline over the synthetic world, so the expected values are
exact.
"""

from collections import Counter
from dataclasses import replace
from pathlib import Path

import pytest

from src.adapters.outgoing.persistence.batches import export_batches, load_batches
from src.adapters.outgoing.tokenizers import RegexTokenizer
from src.config import dependencies
from src.core.domain.config import RunConfig
from src.core.domain.models import Difficulty, MultimodalQuery, Termination
from src.core.ports.outgoing.clients import PolicyClient
from src.core.usecases.rollout import RolloutService
from tests.synthetic import LazyPolicy, OraclePolicy


def rollouts(config: RunConfig, policy: PolicyClient) -> RolloutService:
    return dependencies.build_rollout_service(config, policy=policy)


@pytest.mark.integration
class TestEndToEnd:
    """Tests for the whole pipeline over offline backends."""

    async def test_forge(self, forged_dataset: list[MultimodalQuery]) -> None:
        """Three questions per landmark, all hard for a blind solver."""
        assert len(forged_dataset) == 21
        assert Counter(len(q.evidence_hops) for q in forged_dataset) == Counter(
            {2: 14, 3: 7}
        )
        assert {q.difficulty for q in forged_dataset} == {Difficulty.HARD}

    async def test_oracle_agent_scores_perfectly(
        self, offline_config: RunConfig, forged_dataset: list[MultimodalQuery]
    ) -> None:
        """Searching every hop and echoing the last passage answers everything."""
        service = dependencies.build_evaluation_service(
            offline_config,
            rollouts=rollouts(offline_config, OraclePolicy(forged_dataset)),
        )

        report, trajectories = await service.evaluate(
            forged_dataset, dataset_name="synthetic"
        )

        assert report.overall.accuracy == 1.0
        assert report.overall.n == 21
        assert report.environment_faults == 0
        assert report.retrieval is not None
        assert report.retrieval.text == 1.0
        assert report.retrieval.image == 1.0
        assert report.tool_usage.ratios["text_search"] == 1.0
        assert report.method == "oracle"
        assert all(t.terminated is Termination.ANSWERED for t in trajectories)

    async def test_lazy_agent_earns_less_and_exports_signed_advantages(
        self,
        tmp_path: Path,
        offline_config: RunConfig,
        forged_dataset: list[MultimodalQuery],
    ) -> None:
        """Skipping text search loses reward on every item; GRPO ranks it lower."""
        oracle_runs = await rollouts(
            offline_config, OraclePolicy(forged_dataset)
        ).run_many(forged_dataset)
        lazy_runs = await rollouts(offline_config, LazyPolicy(forged_dataset)).run_many(
            forged_dataset
        )
        rewards = dependencies.build_reward_service(offline_config)
        queries = {q.id: q for q in forged_dataset}
        runs = []
        for [oracle], [lazy] in zip(oracle_runs, lazy_runs, strict=True):
            runs += [oracle, replace(lazy, sample_index=1)]
        scores = [await rewards.score(t, queries[t.query_id]) for t in runs]

        for oracle_score, lazy_score in zip(scores[::2], scores[1::2], strict=True):
            assert oracle_score.text_retrieval == 0.5
            assert lazy_score.text_retrieval == 0.0
            assert lazy_score.total < oracle_score.total

        tokenizer = RegexTokenizer()
        export = dependencies.build_export_service(offline_config, tokenizer)
        batches, summaries = export.build_groups(runs, scores, queries)
        path = tmp_path / "batches.jsonl"
        export_batches(path, batches, tokenizer=tokenizer.name)
        header, loaded = load_batches(path)

        assert loaded == batches
        assert header["num_groups"] == 21
        assert [s.excluded for s in summaries] == [0] * 21
        for batch in batches:
            assert batch.advantages[0] > 0 > batch.advantages[1]
            assert batch.advantages == pytest.approx((1.0, -1.0))
