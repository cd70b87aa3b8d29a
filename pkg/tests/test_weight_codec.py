import numpy as np
import pytest

from errors import (
    BadMagicError,
    ContractError,
    DataFormatError,
    LengthMismatchError,
    TruncatedFileError,
)
from semi_acgan import GanArch, ModelParams, init_params
from tensor_core import ParamBundle
from weight_codec import (
    ChunkSet,
    WeightVector,
    chunk,
    flatten,
    load_checkpoint,
    manifest_length,
    save_checkpoint,
    unchunk,
    unflatten,
)

ARCH = GanArch(image_shape=(1, 8, 8), num_classes=4, noise_dim=8, gen_channels=4)


def _vector(n: int) -> WeightVector:
    return WeightVector(values=np.arange(n, dtype=float), manifest=(("w", (n,)),))


@pytest.mark.parametrize(
    "total,num_chunks,pad",
    [(1000, 4, 0), (1001, 5, 249), (250, 1, 0), (1, 1, 249)],
)
def test_chunk_counts_and_padding(total, num_chunks, pad):
    c = chunk(_vector(total), 250)
    assert c.num_chunks == num_chunks
    assert c.pad_len == pad
    assert c.chunks.shape == (num_chunks, 250)
    np.testing.assert_array_equal(c.chunks.reshape(-1)[total:], np.zeros(pad))


def test_chunk_round_trip_is_bitwise():
    rng = np.random.default_rng(0)
    params = init_params(ARCH, rng)
    w = flatten(params)
    back = unchunk(chunk(w, 250))
    assert back.values.tobytes() == w.values.tobytes()
    assert back.manifest == w.manifest


def test_flatten_follows_manifest_order():
    params = init_params(ARCH, np.random.default_rng(1))
    w = flatten(params)
    first_name, first_shape = ARCH.param_shapes()[0]
    n = int(np.prod(first_shape))
    np.testing.assert_array_equal(w.values[:n], params.params[first_name].ravel())
    assert w.total_len == manifest_length(ARCH.param_shapes())


def test_unflatten_restores_model_with_default_buffers():
    params = init_params(ARCH, np.random.default_rng(2))
    model = unflatten(flatten(params))
    assert isinstance(model, ModelParams)
    assert model.equals(params)


def test_unchunk_detects_manifest_mismatch():
    c = chunk(_vector(300), 250)
    bad = ChunkSet(chunk_size=250, chunks=c.chunks, pad_len=c.pad_len, manifest=(("w", (301,)),))
    with pytest.raises(LengthMismatchError):
        unchunk(bad)


def test_weight_vector_checks_manifest():
    with pytest.raises(ContractError):
        WeightVector(values=np.zeros(3), manifest=(("w", (4,)),))


def test_chunk_size_must_be_positive():
    with pytest.raises(ContractError):
        chunk(_vector(10), 0)


def test_checkpoint_round_trip(tmp_path):
    params = init_params(ARCH, np.random.default_rng(3))
    path = save_checkpoint(params, tmp_path / "model.mcwt")
    back = load_checkpoint(path)
    assert isinstance(back, ModelParams)
    assert back.equals(params)


def test_checkpoint_keeps_bundle_class(tmp_path):
    bundle = ParamBundle(params={"a": np.ones((2, 3))}, buffers={})
    back = load_checkpoint(save_checkpoint(bundle, tmp_path / "b.mcwt"), ParamBundle)
    assert type(back) is ParamBundle
    assert back.equals(bundle)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.mcwt"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = save_checkpoint(ParamBundle(params={"a": np.ones(10)}), tmp_path / "t.mcwt")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(TruncatedFileError):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path):
    path = save_checkpoint(ParamBundle(params={"a": np.ones(10)}), tmp_path / "t.mcwt")
    path.write_bytes(path.read_bytes() + bytes(8))
    with pytest.raises(LengthMismatchError):
        load_checkpoint(path)


def _random_bundle(rng: np.random.Generator) -> ParamBundle:
    params = {}
    for i in range(int(rng.integers(1, 5))):
        shape = tuple(int(d) for d in rng.integers(1, 7, size=int(rng.integers(1, 4))))
        params[f"layer{i}.w"] = rng.standard_normal(shape) * 10.0 ** rng.integers(-6, 6)
    return ParamBundle(params=params)


@pytest.mark.parametrize("seed", range(100))
def test_codec_and_checkpoint_round_trips_are_bitwise(seed, tmp_path):
    rng = np.random.default_rng(seed)
    bundle = _random_bundle(rng)
    chunk_size = int(rng.integers(1, 300))
    w = flatten(bundle)

    c = chunk(w, chunk_size)
    assert c.num_chunks * chunk_size - c.pad_len == w.total_len
    assert 0 <= c.pad_len < chunk_size
    back = unchunk(c)
    assert back.values.tobytes() == w.values.tobytes()
    assert back.manifest == w.manifest

    loaded = load_checkpoint(save_checkpoint(bundle, tmp_path / "p.mcwt"), ParamBundle)
    assert list(loaded.params) == list(bundle.params)
    for name, value in bundle.params.items():
        assert loaded.params[name].shape == value.shape
        assert loaded.params[name].tobytes() == value.tobytes()


def test_1001_values_round_trip_through_five_chunks():
    w = WeightVector(values=np.random.default_rng(7).standard_normal(1001), manifest=(("w", (1001,)),))
    c = chunk(w, 250)
    assert (c.num_chunks, c.pad_len) == (5, 249)
    assert unchunk(c).values.tobytes() == w.values.tobytes()


@pytest.mark.parametrize("pad_len", [-1, 251])
def test_unchunk_rejects_pad_len_out_of_range(pad_len):
    c = chunk(_vector(300), 250)
    with pytest.raises(DataFormatError):
        unchunk(ChunkSet(chunk_size=250, chunks=c.chunks, pad_len=pad_len, manifest=c.manifest))


@pytest.mark.parametrize("delta", [-1, 1])
def test_unchunk_rejects_a_shifted_pad_len(delta):
    c = chunk(_vector(300), 250)
    with pytest.raises(LengthMismatchError):
        unchunk(ChunkSet(chunk_size=250, chunks=c.chunks, pad_len=c.pad_len + delta, manifest=c.manifest))
