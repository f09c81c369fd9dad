"""JSON parameter checkpoints."""
import hashlib
import json
import os

import numpy as np

from .exceptions import ContractViolation
from .nets import ParameterStore

__all__ = ['CHECKPOINT_MAGIC', 'save_checkpoint', 'load_checkpoint',
           'checkpoint_dict', 'parameter_hash']

CHECKPOINT_MAGIC = "MOCA-CKPT-v1"


def checkpoint_dict(store):
    params = {}
    for name, value in store.items():
        params[name] = {'shape': list(value.shape),
                        'trainable': store.is_trainable(name),
                        'data': value.data.ravel().tolist()}
    return {'magic': CHECKPOINT_MAGIC, 'params': params}


def parameter_hash(store):
    """sha256 of the canonical checkpoint encoding."""
    payload = json.dumps(checkpoint_dict(store), sort_keys=True)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def save_checkpoint(store, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(checkpoint_dict(store), f)
    return path


def load_checkpoint(path, store=None):
    """Read a checkpoint.

    With ``store`` given, values are written into it (names and shapes must
    match); otherwise a new store is built from the file.
    """
    with open(path) as f:
        document = json.load(f)
    if document.get('magic') != CHECKPOINT_MAGIC:
        raise ContractViolation("%s is not a %s checkpoint"
                                % (path, CHECKPOINT_MAGIC))
    state = {}
    trainable = {}
    for name, entry in document['params'].items():
        data = np.asarray(entry['data'], dtype=np.float64)
        state[name] = data.reshape(entry['shape'])
        trainable[name] = entry.get('trainable', True)
    if store is None:
        store = ParameterStore()
        for name, data in state.items():
            store.add(name, data, trainable=trainable[name])
    else:
        store.load_state_dict(state)
    return store
