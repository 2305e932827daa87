# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

'''
Model and dataset files.

Weight blob (.snnf), all integers little-endian:
    magic b'SNNF' | format_version u32 | entry count u32
    per entry: name length u16 | name (utf-8) | dtype u8 (0 = f32) |
               rank u8 | dims u32 x rank | payload f32 x prod(dims)

Manifest (.json), UTF-8, keys sorted, 2-space indent:
    {"format_version": 1, "input_shape": [...], "activation_mode": "relu",
     "readout_scale": [...], "t0_estimate": null, "norm_variant": null,
     "layers": [{"kind": ..., <hyperparameters>, "theta": [...],
                 "weights": {<parameter>: <blob entry name>}}, ...]}

Dataset (.snnd):
    magic b'SNND' | dtype u8 | rank u8 | dims u32 x rank | payload f32
    dim 0 is the sample count.

Labels (.snnl):
    magic b'SNNL' | count u32 | labels u32 x count
'''

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layers import make_layer
from .networkGraph import NetworkGraph
from .errors import (ModelIOError, MagicMismatchError, UnsupportedVersionError,
                     DanglingReferenceError, ShapeInconsistencyError,
                     DatasetFormatError, ConfigError, SnnConvError)
from .constants import (FORMAT_VERSION, BLOB_MAGIC, DATASET_MAGIC, LABELS_MAGIC,
                        DTYPE_F32)
from .logger import get_logger


@dataclass
class DatasetBatch:
    data: np.ndarray
    labels: np.ndarray = None
    indices: np.ndarray = None

    def __len__(self):
        return self.data.shape[0]


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as err:
        raise ModelIOError(f'cannot read {path}: {err}') from None


def _write_bytes(path, buf):
    try:
        Path(path).write_bytes(buf)
    except OSError as err:
        raise ModelIOError(f'cannot write {path}: {err}') from None


class _Reader():
    '''Bounds-checked cursor over a byte buffer'''

    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    @property
    def remaining(self):
        return len(self.buf) - self.pos

    def take(self, nbytes, what):
        if nbytes > self.remaining:
            raise ModelIOError(f'{self.path}: truncated {what} '
                               f'(needs {nbytes} bytes, {self.remaining} left)')
        chunk = self.buf[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def uint(self, dtype, what, count=1):
        dt = np.dtype(dtype)
        raw = self.take(dt.itemsize*count, what)
        vals = np.frombuffer(raw, dtype=dt, count=count)
        return int(vals[0]) if count == 1 else [int(v) for v in vals]


def _payload_bytes(dims):
    '''float32 payload size of a header, exact for any u32 dims'''
    return math.prod(int(d) for d in dims)*4


def _tensor_header(arr):
    return (np.array([DTYPE_F32, arr.ndim], dtype='<u1').tobytes()
            + np.array(arr.shape, dtype='<u4').tobytes())


# ---------- weight blob ---------- #

def write_blob(path, entries):
    '''Write an ordered {name: array} mapping as a weight blob'''
    names = list(entries)
    if len(set(names)) != len(names):
        raise ModelIOError('weight blob entry names must be unique')
    chunks = [BLOB_MAGIC, np.array([FORMAT_VERSION, len(names)], dtype='<u4').tobytes()]
    for name in names:
        arr = np.ascontiguousarray(entries[name], dtype='<f4')
        bname = name.encode('utf-8')
        chunks.append(np.array([len(bname)], dtype='<u2').tobytes())
        chunks.append(bname)
        chunks.append(_tensor_header(arr))
        chunks.append(arr.tobytes())
    _write_bytes(path, b''.join(chunks))


def read_blob(path):
    '''
    Read a weight blob into an ordered {name: float32 array} mapping.
    Header sizes are checked against the bytes left in the file before
    anything is allocated.
    '''
    buf = _read_bytes(path)
    rd = _Reader(buf, path)
    magic = rd.take(4, 'magic') if len(buf) >= 4 else buf
    if magic != BLOB_MAGIC:
        raise MagicMismatchError(f'{path}: expected magic {BLOB_MAGIC!r}, got {bytes(magic[:4])!r}')
    version = rd.uint('<u4', 'format version')
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f'{path}: weight blob version {version} (supported: {FORMAT_VERSION})')
    count = rd.uint('<u4', 'entry count')

    entries = {}
    for k in range(count):
        nlen = rd.uint('<u2', f'name length of entry {k}')
        try:
            name = rd.take(nlen, f'name of entry {k}').decode('utf-8')
        except UnicodeDecodeError:
            raise ModelIOError(f'{path}: entry {k} name is not valid utf-8') from None
        if name in entries:
            raise ModelIOError(f'{path}: duplicate entry "{name}"')
        dtype = rd.uint('<u1', f'dtype of "{name}"')
        if dtype != DTYPE_F32:
            raise ShapeInconsistencyError(name, f'unsupported dtype tag {dtype}')
        rank = rd.uint('<u1', f'rank of "{name}"')
        dims = rd.uint('<u4', f'dims of "{name}"', count=rank) if rank else []
        dims = [dims] if isinstance(dims, int) else dims
        nbytes = _payload_bytes(dims)
        if nbytes > rd.remaining:
            raise ShapeInconsistencyError(name, f'payload of {nbytes} bytes for dims {dims} '
                                                f'but only {rd.remaining} bytes left')
        raw = rd.take(nbytes, f'payload of "{name}"')
        entries[name] = np.frombuffer(raw, dtype='<f4').astype(np.float32).reshape(dims)

    if rd.remaining:
        raise ModelIOError(f'{path}: {rd.remaining} trailing bytes after {count} entries')
    return entries


# ---------- model ---------- #

def _jsonify(val):
    if isinstance(val, np.ndarray):
        return [float(v) for v in val.reshape(-1)]
    if isinstance(val, (np.integer,)):
        return int(val)
    if isinstance(val, (np.floating,)):
        return float(val)
    return val


def graph_to_manifest(graph):
    '''Split a graph into its manifest dictionary and ordered weight entries'''
    layers, entries = [], {}
    for i, layer in enumerate(graph.layers):
        desc = {'kind': layer.kind}
        desc.update({k: _jsonify(v) for k, v in layer.hyper.items()})
        weights = {}
        for name, arr in layer.params.items():
            if name == 'theta':
                desc['theta'] = _jsonify(arr)
                continue
            ref = f'layer{i}.{name}'
            weights[name] = ref
            entries[ref] = arr
        if weights:
            desc['weights'] = weights
        layers.append(desc)

    manifest = {
        'format_version': FORMAT_VERSION,
        'input_shape': list(graph.input_shape),
        'activation_mode': graph.activation_mode,
        'readout_scale': _jsonify(graph.readout_scale),
        't0_estimate': graph.t0_estimate,
        'norm_variant': graph.norm_variant,
        'layers': layers,
    }
    return manifest, entries


def save_model(graph, manifest_path, blob_path):
    '''
    Write a graph as a JSON manifest plus a weight blob.
    Identical graphs give byte-identical files.
    '''
    manifest, entries = graph_to_manifest(graph)
    text = json.dumps(manifest, indent=2, sort_keys=True) + '\n'
    _write_bytes(manifest_path, text.encode('utf-8'))
    write_blob(blob_path, entries)
    get_logger().debug(f'saved model {manifest_path} ({len(entries)} weight entries)')


def load_model(manifest_path, blob_path):
    '''
    Materialize a NetworkGraph from a manifest and its weight blob

    Raises:
    -------
    MagicMismatchError, UnsupportedVersionError, DanglingReferenceError,
    ShapeInconsistencyError, or ModelIOError for other corruption
    '''
    try:
        manifest = json.loads(_read_bytes(manifest_path).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ModelIOError(f'{manifest_path}: not a valid manifest ({err})') from None
    if not isinstance(manifest, dict) or 'layers' not in manifest:
        raise ModelIOError(f'{manifest_path}: manifest without a layer list')

    version = manifest.get('format_version')
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f'{manifest_path}: manifest version {version} (supported: {FORMAT_VERSION})')

    entries = read_blob(blob_path)
    used = set()

    layers = []
    for i, desc in enumerate(manifest['layers']):
        desc = dict(desc)
        kind = desc.pop('kind', None)
        refs = desc.pop('weights', {})
        theta = desc.pop('theta', None)
        params = {}
        for pname, ref in refs.items():
            if ref not in entries:
                raise DanglingReferenceError(ref, blob_path)
            params[pname] = entries[ref]
            used.add(ref)
        if theta is not None:
            params['theta'] = np.asarray(theta, dtype=np.float64)
        try:
            layer = make_layer(kind, params=params, hyper=desc)
        except TypeError as err:
            raise ModelIOError(f'{manifest_path}: layer {i} ({kind}): {err}') from None
        except SnnConvError as err:
            name = next(iter(refs.values()), f'layer{i}')
            raise ShapeInconsistencyError(name, str(err)) from None
        layers.append(layer)

    unused = [name for name in entries if name not in used]
    if unused:
        get_logger().warning(f'{blob_path}: {len(unused)} unreferenced weight entries ignored')

    try:
        return NetworkGraph(layers, manifest.get('input_shape', []),
                            activation_mode=manifest.get('activation_mode', 'relu'),
                            readout_scale=manifest.get('readout_scale'),
                            t0_estimate=manifest.get('t0_estimate'),
                            norm_variant=manifest.get('norm_variant'))
    except SnnConvError as err:
        idx = getattr(err, 'layer_index', None)
        if idx is not None and idx < len(layers):
            name = next(iter(manifest['layers'][idx].get('weights', {}).values()), f'layer{idx}')
            raise ShapeInconsistencyError(name, str(err)) from None
        raise


# ---------- datasets ---------- #

def save_dataset(path, data):
    '''Write a float32 sample array (dim 0 = samples) as a dataset file'''
    arr = np.ascontiguousarray(data, dtype='<f4')
    if arr.ndim < 1:
        raise DatasetFormatError('dataset needs at least one dimension')
    _write_bytes(path, DATASET_MAGIC + _tensor_header(arr) + arr.tobytes())


def load_dataset(path):
    '''Read a whole dataset file into a float32 array'''
    buf = _read_bytes(path)
    rd = _Reader(buf, path)
    if buf[:4] != DATASET_MAGIC:
        raise MagicMismatchError(f'{path}: expected magic {DATASET_MAGIC!r}, got {bytes(buf[:4])!r}')
    rd.take(4, 'magic')
    try:
        dtype = rd.uint('<u1', 'dtype')
        rank = rd.uint('<u1', 'rank')
        if dtype != DTYPE_F32:
            raise DatasetFormatError(f'{path}: unsupported dtype tag {dtype}')
        if rank < 1:
            raise DatasetFormatError(f'{path}: dataset rank must be >= 1')
        dims = rd.uint('<u4', 'dims', count=rank)
        dims = [dims] if isinstance(dims, int) else dims
    except DatasetFormatError:
        raise
    except ModelIOError as err:
        raise DatasetFormatError(str(err)) from None
    nbytes = _payload_bytes(dims)
    if nbytes != rd.remaining:
        raise DatasetFormatError(f'{path}: header dims {dims} need {nbytes} payload bytes, '
                                 f'file holds {rd.remaining}')
    return np.frombuffer(rd.take(nbytes, 'payload'), dtype='<f4').astype(np.float32).reshape(dims)


def save_labels(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or (labels.size and labels.min() < 0):
        raise DatasetFormatError('labels must be a 1-D array of non-negative class indices')
    _write_bytes(path, LABELS_MAGIC + np.array([labels.size], dtype='<u4').tobytes()
                 + labels.astype('<u4').tobytes())


def load_labels(path):
    buf = _read_bytes(path)
    if buf[:4] != LABELS_MAGIC:
        raise MagicMismatchError(f'{path}: expected magic {LABELS_MAGIC!r}, got {bytes(buf[:4])!r}')
    if len(buf) < 8:
        raise DatasetFormatError(f'{path}: truncated label header')
    count = int(np.frombuffer(buf, dtype='<u4', count=1, offset=4)[0])
    if len(buf) - 8 != 4*count:
        raise DatasetFormatError(f'{path}: header declares {count} labels, file holds {(len(buf) - 8)/4:g}')
    return np.frombuffer(buf, dtype='<u4', offset=8).astype(np.int64)


def load_batches(dataset_path, batch_size, labels_path=None, shuffle=False, seed=None):
    '''
    Iterate over a dataset file in batches

    Parameters:
    -----------
    dataset_path: str or Path
    batch_size: int
        Samples per batch (>= 1); the final batch may be short
    labels_path: str or Path, optional
        Labels file with one class index per sample
    shuffle: bool, default False
        Visit the samples in a permutation drawn from `seed`.
        Default order is file order.
    seed: int, optional

    Returns:
    --------
    iterator of DatasetBatch
    '''
    if int(batch_size) < 1:
        raise ConfigError(f'batch_size must be >= 1, got {batch_size}')
    batch_size = int(batch_size)

    data = load_dataset(dataset_path)
    labels = None
    if labels_path is not None:
        labels = load_labels(labels_path)
        if labels.size != data.shape[0]:
            raise DatasetFormatError(f'{labels_path}: {labels.size} labels for {data.shape[0]} samples')

    n = data.shape[0]
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)

    def batches():
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield DatasetBatch(data=data[idx], labels=None if labels is None else labels[idx],
                               indices=idx)

    return batches()


def as_array(batch):
    '''Raw input array of a DatasetBatch or of a plain array'''
    return batch.data if isinstance(batch, DatasetBatch) else np.asarray(batch)
