"""Train a small reader on a two-field document and decode a few held-out images.

Takes under a minute on one core.
"""
from eaten.backbone import BackboneConfig
from eaten.domain import CharVocab, EntitySchema
from eaten.metrics import evaluate
from eaten.model import EatenModel, ModelConfig
from eaten.synthgen import ScenarioSpec, SlotSpec, TransformSpec, generate_samples
from eaten.training import TrainConfig, train

spec = ScenarioSpec("receipt", "fixed", 32, 32, [
    SlotSpec("CODE", pattern="U{2}D", anchor=(1, 1)),
    SlotSpec("AMOUNT", pattern="D{1,3}", anchor=(17, 1)),
])
schema = EntitySchema([(["CODE"], 4), (["AMOUNT"], 4)])
data = generate_samples(spec, TransformSpec(), n_train=400, n_test=40, seed=0)

model = EatenModel(schema, CharVocab(spec.alphabet()),
                   ModelConfig(image_size=(32, 32), backbone=BackboneConfig([(16, 2), (32, 2), (32, 2)]),
                               n_h=48, n_a=24, d_c=24), seed=0)
train(model, data["train"], TrainConfig(epochs=30, batch_size=8), val_set=data["test"],
      on_epoch=lambda r: print(f"epoch {r['epoch']:2d}  loss {r['loss']:7.3f}  held-out mEA {r['val_mEA']:.3f}"))

print(evaluate(model, data["test"]).table())
for sample in data["test"][:5]:
    print(sample.targets, "->", model.infer(sample.image))
