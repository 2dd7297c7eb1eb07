"""Certify the analytic gradients of a toy two-decoder model against finite differences."""
import numpy as np

from eaten import numerics as nx
from eaten.backbone import BackboneConfig
from eaten.domain import CharVocab, EntitySchema, Sample
from eaten.model import EatenModel, ModelConfig
from eaten.training import TrainConfig, batch_loss

vocab = CharVocab("abcdefgh")
schema = EntitySchema([(["x"], 3), (["y", "z"], 4)])
config = ModelConfig(image_size=(16, 16), backbone=BackboneConfig([(4, 2), (8, 2)]), n_h=8, n_a=6, d_c=5,
                     position_channels=False)
model = EatenModel(schema, vocab, config, seed=0)

rng = np.random.default_rng(0)
samples = [Sample(rng.random((16, 16)), {"x": "ab", "y": "c", "z": ""}),
           Sample(rng.random((16, 16)), {"x": "", "y": "h", "z": "d"})]

params = model.parameters()
errors = nx.finite_diff_check(lambda: batch_loss(model, samples, TrainConfig()), list(params.values()))
for name, err in zip(params, errors):
    print(f"{name:14s} {params[name].size:5d} values   worst relative error {err:.1e}")
print("worst overall:", max(errors))
