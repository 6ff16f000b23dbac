from pathlib import Path

import pytest

from rankqa.pipeline import PipelineConfig, load_resources

FIXTURES = Path(__file__).parent / "fixtures"
TOY = FIXTURES / "toy"


@pytest.fixture
def toy_config(tmp_path) -> PipelineConfig:
    return PipelineConfig(
        collection=str(TOY / "collection.tsv"),
        full_rank_top_n=100,
        rerank_size=5,
        batch_size=2,
        n_values=(1, 5, 10),
        output_dir=str(tmp_path / "run"),
        run_tag="toy",
        queries=str(TOY / "queries.tsv"),
        qrels=str(TOY / "qrels.txt"),
        answers=str(TOY / "answers.tsv"),
        embeddings=str(TOY / "embeddings.txt"),
    )


@pytest.fixture
def toy_resources(toy_config):
    return load_resources(toy_config)
