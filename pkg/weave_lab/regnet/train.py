"""
    Training loop: minibatch Adam on NMAE with seeded shuffling, early
    stopping and optional freezing of the last dense layers.
"""
import csv
import logging

import numpy as np

from weave_lab.errors import ModelError, DivergedNaN, NonFiniteActivation
from weave_lab.regnet.model import RegModel, Adam, nmae, nmae_grad

log = logging.getLogger(__name__)


class TrainConfig(object):
    """
        Training hyper-parameters.

        `batch_size`, `lr`, `beta1`, `beta2`, `eps`
            Minibatch size and Adam settings.
        `max_epochs`, `patience`
            Epoch limit and early-stopping patience on validation NMAE.
        `seed`
            Seed of the shuffling and dropout streams.
        `freeze_last_dense`
            Number of trailing dense layers left untouched.
    """
    def __init__(self, batch_size=32, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 max_epochs=450, patience=65, seed=0, freeze_last_dense=0):
        self.batch_size = int(batch_size)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.max_epochs = int(max_epochs)
        self.patience = int(patience)
        self.seed = int(seed)
        self.freeze_last_dense = int(freeze_last_dense)

        self.validate()

    def validate(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ModelError('batch_size, max_epochs and patience must be positive')
        if self.lr < 0:
            raise ModelError('lr must not be negative')
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ModelError('Invalid Adam settings')
        if self.patience > self.max_epochs:
            raise ModelError('patience must not exceed max_epochs')
        if self.freeze_last_dense < 0:
            raise ModelError('freeze_last_dense must not be negative')

    def copy(self, **overrides):
        values = dict(self.__dict__)
        values.update(overrides)
        return TrainConfig(**values)


class History(object):
    """ Per-epoch training and validation NMAE. """

    def __init__(self):
        self.rows = []
        self.best_epoch = None
        self.stopped_early = False

    def append(self, epoch, train_nmae, val_nmae):
        self.rows.append((epoch, train_nmae, val_nmae))

    @property
    def epochs(self):
        return len(self.rows)

    @property
    def best_val(self):
        if self.best_epoch is None:
            return None
        return self.rows[self.best_epoch][2]

    def train_nmae(self):
        return [row[1] for row in self.rows]

    def val_nmae(self):
        return [row[2] for row in self.rows]

    def write_csv(self, path):
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(('epoch', 'train_nmae', 'val_nmae'))
            for epoch, train_value, val_value in self.rows:
                writer.writerow((epoch, '%.9g' % train_value, '%.9g' % val_value))


def as_arrays(corpus, model):
    """
        ``(batch, labels)`` from a list of `PatchRecord` or an existing
        ``(batch, labels)`` pair.
    """
    if isinstance(corpus, tuple):
        batch, labels = corpus
        return np.asarray(batch, dtype=model.dtype), np.asarray(labels, dtype=np.float64)

    batch = model.to_batch([record.patch for record in corpus])
    labels = np.array([record.label for record in corpus], dtype=np.float64)
    return batch, labels


def _batches(order, batch_size):
    # A trailing batch of one would leave batch norm without variance.
    starts = list(range(0, len(order), batch_size))
    if len(starts) > 1 and len(order) - starts[-1] == 1:
        starts.pop()
    for index, start in enumerate(starts):
        stop = starts[index + 1] if index + 1 < len(starts) else len(order)
        yield order[start:stop]


def evaluate_nmae(model, batch, labels, batch_size=64):
    return nmae(model.predict(batch, batch_size), labels)


def train(model, train_corpus, val_corpus, cfg):
    """
        Fit `model` in place and return ``(model, history)``.

        The weights of the best validation epoch are restored at the end.
        Raises `DivergedNaN` on the first non-finite loss.
    """
    x_train, y_train = as_arrays(train_corpus, model)
    x_val, y_val = as_arrays(val_corpus, model)
    if len(y_train) == 0 or len(y_val) == 0:
        raise ModelError('Training and validation corpora must not be empty')

    model.freeze_last_dense(cfg.freeze_last_dense)
    model.seed_dropout(cfg.seed)
    slots = model.trainable()

    optimizer = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    labels_typed = y_train.astype(model.dtype)

    history = History()
    best_state = model.get_state()
    best_val = np.inf
    waited = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(y_train))
        total, seen = 0.0, 0

        model.train_mode = True
        for index in _batches(order, cfg.batch_size):
            try:
                preds = model.forward(x_train[index], train=True)
            except NonFiniteActivation as ex:
                model.train_mode = False
                raise DivergedNaN(epoch, str(ex))
            loss = nmae(preds, y_train[index])
            if not np.isfinite(loss):
                model.train_mode = False
                raise DivergedNaN(epoch)

            model.backward(nmae_grad(preds, labels_typed[index]))
            optimizer.step(slots)

            total += loss * len(index)
            seen += len(index)
        model.train_mode = False

        train_value = total / seen
        try:
            val_value = evaluate_nmae(model, x_val, y_val, cfg.batch_size)
        except NonFiniteActivation as ex:
            raise DivergedNaN(epoch, str(ex))
        if not np.isfinite(val_value):
            raise DivergedNaN(epoch)

        history.append(epoch, train_value, val_value)
        log.info('Epoch %d: train NMAE %.5f, val NMAE %.5f', epoch, train_value, val_value)

        if val_value < best_val:
            best_val = val_value
            best_state = model.get_state()
            history.best_epoch = epoch
            waited = 0
        else:
            waited += 1
            if waited >= cfg.patience:
                history.stopped_early = True
                log.info('Early stop after %d epochs, best epoch %d',
                         epoch + 1, history.best_epoch)
                break

    model.set_state(best_state)
    return model, history


def train_restarts(config, train_corpus, val_corpus, cfg, restarts=1, dtype=np.float32):
    """
        Train `restarts` freshly initialised models (seeds ``cfg.seed``,
        ``cfg.seed + 1``, ...) and keep the one with the lowest validation
        NMAE.

        Returns ``(model, history, seed)``.
    """
    best = None
    for restart in range(max(1, restarts)):
        seed = cfg.seed + restart
        model = RegModel(config, seed=seed, dtype=dtype)
        model, history = train(model, train_corpus, val_corpus, cfg.copy(seed=seed))
        log.info('Restart %d (seed %d): best val NMAE %.5f', restart, seed,
                 history.best_val)
        if best is None or history.best_val < best[1].best_val:
            best = (model, history, seed)
    return best


def evaluate(model, corpus, batch_size=64):
    """
        Test-set NMAE and per-record rows ``(file, label, prediction, nae)``.
    """
    batch, labels = as_arrays(corpus, model)
    preds = model.predict(batch, batch_size).astype(np.float64)
    errors = np.abs(preds - labels) / labels

    rows = []
    for index, (label, pred, error) in enumerate(zip(labels, preds, errors)):
        name = index
        if not isinstance(corpus, tuple):
            name = getattr(corpus[index], 'file', index)
        rows.append((name, label, pred, error))

    return nmae(preds, labels), rows


def write_evaluation_csv(rows, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(('file', 'label', 'prediction', 'nae'))
        for name, label, pred, error in rows:
            writer.writerow((name, '%.9g' % label, '%.9g' % pred, '%.9g' % error))
