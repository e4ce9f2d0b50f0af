import numpy as np
import pytest

from boxl1 import advtrain as AT, apgd as A, models as M
from boxl1.errors import ParameterError
from boxl1.geometry import ThreatModel


@pytest.fixture(scope="module")
def blob_data():
    return M.make_blobs(16, 96, 2, 8.0, np.random.default_rng(50))


class TestAdvTrain:
    def test_zero_eps_equals_plain_training(self, blob_data):
        adv = M.MlpModel.initialized((16, 8, 2), np.random.default_rng(1))
        plain = M.MlpModel.initialized((16, 8, 2), np.random.default_rng(1))
        AT.adv_train(adv, blob_data, AT.AtConfig(eps_train=0.0, epochs=3, lr=0.4),
                     np.random.default_rng(2))
        M.train_plain(plain, blob_data, epochs=3, lr=0.4,
                      rng=np.random.default_rng(2))
        for Wa, Wp in zip(adv.weights, plain.weights):
            np.testing.assert_array_equal(Wa, Wp)

    def test_deterministic(self, blob_data):
        runs = []
        for _ in range(2):
            model = M.MlpModel.initialized((16, 8, 2), np.random.default_rng(3))
            AT.adv_train(model, blob_data,
                         AT.AtConfig(eps_train=1.0, epochs=2, lr=0.4),
                         np.random.default_rng(4))
            runs.append([W.copy() for W in model.weights])
        for Wa, Wb in zip(*runs):
            np.testing.assert_array_equal(Wa, Wb)

    def test_snapshots_per_epoch(self, blob_data):
        model = M.MlpModel.initialized((16, 8, 2), np.random.default_rng(5))
        snaps = []
        AT.adv_train(model, blob_data, AT.AtConfig(eps_train=0.5, epochs=4, lr=0.4),
                     np.random.default_rng(6), snapshots=snaps)
        assert len(snaps) == 4
        # snapshots are copies, not references
        assert not any(s is model for s in snaps)
        assert not np.array_equal(snaps[0].weights[0], snaps[-1].weights[0])

    def test_inner_maximizer_feasibility(self, blob_data):
        # the training attack must stay inside B1(x, eps_train) ∩ [0,1]^d
        model = M.MlpModel.initialized((16, 8, 2), np.random.default_rng(7))
        cfg = A.ApgdConfig(n_iter=10, k0=0.05, phases=(), record_iterates=True)
        for i in range(8):
            x = blob_data.inputs[i]
            tm = ThreatModel(x, 1.5)
            res = A.apgd_single(model, "ce", None, x, int(blob_data.labels[i]),
                                tm, cfg, rng=np.random.default_rng(i))
            for it in res.iterates:
                assert tm.contains(it)

    def test_validation(self):
        with pytest.raises(ParameterError):
            AT.AtConfig(eps_train=-1.0)
        with pytest.raises(ParameterError):
            AT.AtConfig(eps_train=1.0, inner_steps=0)


class TestOverfittingProbe:
    def test_rows_shape_and_dominance_report(self, blob_data):
        model = M.MlpModel.initialized((16, 8, 2), np.random.default_rng(8))
        snaps = []
        AT.adv_train(model, blob_data, AT.AtConfig(eps_train=1.0, epochs=2, lr=0.4),
                     np.random.default_rng(9), snapshots=snaps)
        small = M.LabeledDataset(blob_data.inputs[:12], blob_data.labels[:12], 2)
        rows = AT.overfitting_probe(snaps, small, small, 1.0,
                                    np.random.default_rng(10), eval_iters=20)
        assert len(rows) == 2 * 2 * 2  # epochs x splits x attacks
        for epoch, split, attack, acc in rows:
            assert split in ("train", "test")
            assert attack in ("train-attack", "eval-attack")
            assert 0.0 <= acc <= 1.0

    def test_undefended_model_breaks_at_attackable_radius(self):
        # blob separation ~4.8, so eps=6 exceeds even the Bayes radius
        data = M.make_blobs(16, 64, 2, 4.0, np.random.default_rng(11))
        model = M.MlpModel.initialized((16, 16, 2), np.random.default_rng(12))
        M.train_plain(model, data, epochs=15, lr=0.5, rng=np.random.default_rng(13))
        small = M.LabeledDataset(data.inputs[:16], data.labels[:16], 2)
        assert M.accuracy(model, small) == 1.0
        rows = AT.overfitting_probe([model], small, small, 6.0,
                                    np.random.default_rng(14))
        eval_accs = [acc for _, _, attack, acc in rows if attack == "eval-attack"]
        assert max(eval_accs) <= 0.25

    def test_prefix_dominance_of_long_run(self, blob_data):
        # the 100-step run's best loss dominates its own 10-step prefix
        model = M.LinearSoftmaxModel.initialized(16, 2, np.random.default_rng(15))
        M.train_plain(model, blob_data, epochs=10, lr=1.0,
                      rng=np.random.default_rng(16))
        x, y = blob_data.inputs[0], int(blob_data.labels[0])
        res = A.apgd_single(model, "ce", None, x, y, ThreatModel(x, 2.0),
                            A.ApgdConfig(n_iter=100, phases=()),
                            rng=np.random.default_rng(17))
        assert res.loss_best >= max(res.loss_trace[:11])
