import hashlib
import json
import struct

import numpy as np
import pytest

pytest.importorskip("transformers")
pytest.importorskip("torch")

from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from transformers import BartConfig, BartModel, PreTrainedTokenizerFast

from encoder_bridge import (
    DatasetError,
    EncoderResolutionError,
    ExportSpec,
    SequenceOverflowError,
    SpecError,
    export_embeddings,
)

HIDDEN = 16


def build_tiny_encoder(model_dir):
    """A few-kilobyte seq2seq model with a whitespace word-level tokenizer."""
    import torch

    config = BartConfig(
        vocab_size=128, d_model=HIDDEN, encoder_layers=1, decoder_layers=1,
        encoder_attention_heads=2, decoder_attention_heads=2,
        encoder_ffn_dim=32, decoder_ffn_dim=32, max_position_embeddings=64,
    )
    torch.manual_seed(0)
    BartModel(config).save_pretrained(model_dir)

    vocab = {"<s>": 0, "<pad>": 1, "</s>": 2, "<unk>": 3}
    for word in ["sentence", "number"] + [str(i) for i in range(50)]:
        vocab[word] = len(vocab)
    tok = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = Whitespace()
    PreTrainedTokenizerFast(
        tokenizer_object=tok, model_max_length=64,
        bos_token="<s>", eos_token="</s>", pad_token="<pad>", unk_token="<unk>",
    ).save_pretrained(model_dir)


def write_rows(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    root = tmp_path_factory.mktemp("bridge")
    model_dir = root / "model"
    build_tiny_encoder(model_dir)

    rows = [
        {"id": f"s{i:03d}", "text": f"sentence number {i}"} for i in range(8)
    ]
    # two duplicates of the first sentence, placed at the end
    rows.append({"id": "dupA", "text": "sentence number 0"})
    rows.append({"id": "dupB", "text": "sentence number 0"})
    data = root / "data.jsonl"
    write_rows(data, rows)

    four = root / "four.jsonl"
    write_rows(four, rows[:4])
    return {"root": root, "model": str(model_dir), "data": data, "four": four}


def spec_for(env, **overrides):
    base = dict(
        dataset_path=str(env["data"]), encoder=env["model"], pooling="eos",
        max_length=32, output_path=str(env["root"] / "out.ptxe"), batch_size=4,
    )
    base.update(overrides)
    return ExportSpec(**base)


def parse_ptxe(path):
    blob = path.read_bytes()
    assert blob[:4] == b"PTXE"
    (version,) = struct.unpack_from("<I", blob, 4)
    n, dim = struct.unpack_from("<QQ", blob, 8)
    body = 24 + n * dim * 4
    vectors = np.frombuffer(blob[24:body], dtype="<f4").reshape(n, dim)
    ids = []
    pos = body
    for _ in range(n):
        (length,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        ids.append(blob[pos : pos + length].decode("utf-8"))
        pos += length
    assert pos == len(blob)
    return version, vectors, ids


class TestExport:
    def test_four_sentences_give_n4_and_hidden_size(self, env):
        out = env["root"] / "four.ptxe"
        report = export_embeddings(
            spec_for(env, dataset_path=str(env["four"]), output_path=str(out))
        )
        assert (report.n, report.dim) == (4, HIDDEN)
        version, vectors, ids = parse_ptxe(out)
        assert version == 1
        assert vectors.shape == (4, HIDDEN)
        assert np.all(np.isfinite(vectors))

    def test_rows_follow_dataset_order(self, env):
        out = env["root"] / "order.ptxe"
        export_embeddings(spec_for(env, output_path=str(out)))
        _, _, ids = parse_ptxe(out)
        assert ids == [f"s{i:03d}" for i in range(8)] + ["dupA", "dupB"]

    def test_duplicate_sentences_identical_rows(self, env):
        out = env["root"] / "dup.ptxe"
        export_embeddings(spec_for(env, output_path=str(out)))
        _, vectors, ids = parse_ptxe(out)
        first = vectors[ids.index("s000")]
        for dup in ("dupA", "dupB"):
            assert np.max(np.abs(vectors[ids.index(dup)] - first)) < 1e-6

    def test_reexport_is_bit_identical(self, env):
        digests = []
        for name in ("rep1.ptxe", "rep2.ptxe"):
            out = env["root"] / name
            export_embeddings(spec_for(env, output_path=str(out)))
            digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_batch_size_does_not_change_rows(self, env):
        outs = []
        for bs in (1, 8):
            out = env["root"] / f"bs{bs}.ptxe"
            export_embeddings(spec_for(env, batch_size=bs, output_path=str(out)))
            outs.append(parse_ptxe(out)[1])
        # padding enters the batch only through masked positions
        assert np.allclose(outs[0], outs[1], atol=1e-5)

    @pytest.mark.parametrize("pooling", ["cls", "eos", "mean"])
    def test_pooling_modes_run(self, env, pooling):
        out = env["root"] / f"pool_{pooling}.ptxe"
        report = export_embeddings(spec_for(env, pooling=pooling, output_path=str(out)))
        assert report.dim == HIDDEN

    def test_pooling_modes_differ(self, env):
        rows = {}
        for pooling in ("cls", "eos", "mean"):
            out = env["root"] / f"cmp_{pooling}.ptxe"
            export_embeddings(spec_for(env, pooling=pooling, output_path=str(out)))
            rows[pooling] = parse_ptxe(out)[1]
        assert not np.allclose(rows["cls"], rows["eos"])
        assert not np.allclose(rows["eos"], rows["mean"])


class TestSpecValidation:
    def test_unknown_pooling(self, env):
        with pytest.raises(SpecError, match="pooling"):
            spec_for(env, pooling="max")

    def test_unknown_overflow_policy(self, env):
        with pytest.raises(SpecError, match="overflow"):
            spec_for(env, overflow="wrap")

    def test_tiny_max_length(self, env):
        with pytest.raises(SpecError, match="max_length"):
            spec_for(env, max_length=1)

    def test_zero_batch(self, env):
        with pytest.raises(SpecError, match="batch_size"):
            spec_for(env, batch_size=0)


class TestOverflow:
    def test_truncation_warns_with_ids(self, env):
        out = env["root"] / "trunc.ptxe"
        # "sentence number N" is 3 word-level tokens, so 2 truncates every row
        with pytest.warns(UserWarning, match="s000"):
            report = export_embeddings(
                spec_for(env, max_length=2, output_path=str(out))
            )
        assert len(report.truncated_ids) == 10
        assert parse_ptxe(out)[1].shape == (10, HIDDEN)

    def test_error_policy_rejects_overflow(self, env):
        with pytest.raises(SequenceOverflowError) as info:
            export_embeddings(spec_for(env, max_length=2, overflow="error"))
        assert "s000" in info.value.ids

    def test_generous_max_length_truncates_nothing(self, env):
        report = export_embeddings(
            spec_for(env, output_path=str(env["root"] / "no_trunc.ptxe"))
        )
        assert report.truncated_ids == []


class TestFailureModes:
    def test_unresolvable_encoder(self, env):
        with pytest.raises(EncoderResolutionError):
            export_embeddings(spec_for(env, encoder=str(env["root"] / "missing")))

    def test_missing_dataset_file(self, env):
        with pytest.raises(DatasetError):
            export_embeddings(spec_for(env, dataset_path=str(env["root"] / "no.jsonl")))

    def test_duplicate_ids_rejected(self, env, tmp_path):
        bad = tmp_path / "bad.jsonl"
        write_rows(bad, [{"id": "a", "text": "sentence"},
                         {"id": "a", "text": "number"}])
        with pytest.raises(DatasetError, match="duplicate"):
            export_embeddings(spec_for(env, dataset_path=str(bad)))

    def test_missing_text_field_rejected(self, env, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a"}\n')
        with pytest.raises(DatasetError, match="text"):
            export_embeddings(spec_for(env, dataset_path=str(bad)))

    def test_empty_dataset_rejected(self, env, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(DatasetError, match="no examples"):
            export_embeddings(spec_for(env, dataset_path=str(empty)))
