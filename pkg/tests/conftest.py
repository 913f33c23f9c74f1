import pytest

from app.config.config import ExperimentConfig
from app.dataset_gen import generate
from app.ddpm import make_schedule
from app.i2sb import make_bridge_schedule
from app.models import GenConfig
from app.networks import build_denoiser
from app.planner import PlannerModel, planner_service
from app.priors import PriorKind
from tests.stubs import SMALL_ARCH


@pytest.fixture(autouse=True)
def _isolated_output(monkeypatch, tmp_path):
    monkeypatch.delenv("SBPLAN_OUT", raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture(scope="session")
def open_dataset():
    return generate(GenConfig(maze_id="open", total_steps=160, horizon=16, seed=0))


@pytest.fixture
def small_net():
    return build_denoiser(16, 6, seed=0, **SMALL_ARCH)


@pytest.fixture
def ddpm_model(open_dataset, small_net):
    return PlannerModel(
        engine="ddpm",
        net=small_net,
        schedule=make_schedule(4),
        stats=open_dataset.stats,
        maze_id="open",
        prior=PriorKind("gaussian"),
    )


@pytest.fixture
def i2sb_model(open_dataset, small_net):
    return PlannerModel(
        engine="i2sb",
        net=small_net,
        schedule=make_bridge_schedule(4),
        stats=open_dataset.stats,
        maze_id="open",
        prior=PriorKind("straight_line"),
    )


@pytest.fixture
def tiny_config(tmp_path):
    return ExperimentConfig(
        maze_id="open",
        horizon=16,
        engines=["ddpm", "i2sb"],
        priors=["straight_line"],
        n_steps=4,
        ddpm_n_steps=[4],
        nfe_list=[1, 4],
        training_steps=[10],
        batch_size=4,
        dataset_steps=200,
        episodes=4,
        seeds=[0],
        reference_episodes=100,
        out_dir=tmp_path / "runs",
    )


@pytest.fixture
def clean_service():
    planner_service.models.clear()
    planner_service.initialized = False
    yield planner_service
    planner_service.models.clear()
    planner_service.initialized = False

