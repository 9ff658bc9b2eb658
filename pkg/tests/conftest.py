import pytest

from handsynth.training import Trainer

from toydata import make_toy_dataset, micro_model_config, toy_atlas, toy_training_config


@pytest.fixture(scope="session")
def toy_checkpoint_path(tmp_path_factory):
    """An untrained but fully valid micro checkpoint over the toy dataset."""
    dataset = make_toy_dataset()
    trainer = Trainer(dataset, toy_atlas(), micro_model_config(),
                      toy_training_config(batch_size=4))
    path = tmp_path_factory.mktemp("ckpt") / "toy.slgn"
    trainer.save(str(path))
    return str(path)
