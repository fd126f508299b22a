import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcsum.errors import ConfigError
from bcsum.pseudo import (Refiner, RefinerMode, RefinerSpec, TokenClass, apply_mapping, lex_pseudo, parse_duration,
                          refine, tokenize_pseudo)
from bcsum.stub_server import running
from bcsum.tokens import Origin


def test_table_row_tokens():
    seq = tokenize_pseudo("if (a1[55] != dword_162354)")
    assert seq.origin is Origin.PSEUDO
    assert seq.tokens == ["if", "(", "a1", "[", "55", "]", "!=", "dword_162354", ")"]


def test_empty_and_comments():
    assert tokenize_pseudo("").tokens == []
    assert tokenize_pseudo("/*c*/ x = y;").tokens == ["x", "=", "y", ";"]
    assert tokenize_pseudo("x; // trailing\ny;").tokens == ["x", ";", "y", ";"]


def test_placeholders_kept_whole():
    assert tokenize_pseudo("sub_E6D18(a1);").tokens == ["sub_E6D18", "(", "a1", ")", ";"]


def test_unknown_bytes_single_chars():
    assert tokenize_pseudo("a @ $ b").tokens == ["a", "@", "$", "b"]


def test_string_literal_split():
    assert tokenize_pseudo('puts("hello world");').tokens == ["puts", "(", '"', "hello", "world", '"', ")", ";"]


@pytest.fixture
def mapping_file(tmp_path):
    p = tmp_path / "names.tsv"
    p.write_text("sub_E6D18\tburn_drive_free_subs\ndword_162354\tsubs_allocated\n")
    return str(p)


def test_mapping_substitution(mapping_file):
    spec = RefinerSpec(RefinerMode.MAPPING_FILE, mapping_path=mapping_file)
    assert refine("sub_E6D18(a1)", spec) == "burn_drive_free_subs(a1)"
    assert refine("if (a1[55] != dword_162354)", spec) == "if (a1[55] != subs_allocated)"
    assert refine("sub_E6D18x(a1) + xsub_E6D18", spec) == "sub_E6D18x(a1) + xsub_E6D18"


@given(st.text(alphabet="abx_019E6D() ;", max_size=30), st.text(alphabet="abx_019", max_size=4))
@settings(max_examples=200, deadline=None)
def test_mapping_only_whole_identifiers(text, suffix):
    mapping = {"sub_E6D18": "NAME"}
    adversarial = f"{text}sub_E6D18{suffix}"
    out = apply_mapping(adversarial, mapping)
    # every identifier in the output either was untouched or came from an exact match
    before = [t for t, c in lex_pseudo(adversarial) if c is TokenClass.IDENT]
    after = [t for t, c in lex_pseudo(out) if c is TokenClass.IDENT]
    assert after == ["NAME" if t == "sub_E6D18" else t for t in before]


def test_passthrough_identity():
    for text in ["", "x = 1;", "sub_1(a)"]:
        assert refine(text, RefinerSpec()) == text


def test_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        RefinerSpec(RefinerMode.MAPPING_FILE)
    with pytest.raises(ConfigError):
        RefinerSpec(RefinerMode.REMOTE)
    with pytest.raises(ConfigError):
        RefinerSpec("bogus")
    with pytest.raises(ConfigError):
        Refiner(RefinerSpec(RefinerMode.MAPPING_FILE, mapping_path=str(tmp_path / "missing.tsv")))


def test_bad_mapping_line(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("only_one_column\n")
    with pytest.raises(ConfigError, match=":1:"):
        Refiner(RefinerSpec(RefinerMode.MAPPING_FILE, mapping_path=str(p)))


@pytest.mark.parametrize("text,secs", [("10", 10.0), ("10s", 10.0), ("500ms", 0.5), ("2m", 120.0)])
def test_parse_duration(text, secs):
    assert parse_duration(text) == secs


def test_remote_uppercase():
    with running() as url:
        spec = RefinerSpec(RefinerMode.REMOTE, endpoint=url + "/", timeout=5)
        assert refine("sub_1(a1);", spec) == "SUB_1(A1);"


def test_remote_failure_falls_back():
    with running() as url:
        r = Refiner(RefinerSpec(RefinerMode.REMOTE, endpoint=url + "/fail", timeout=5))
        assert r("keep me") == "keep me"
        assert r.warnings


def test_remote_timeout_falls_back():
    with running() as url:
        r = Refiner(RefinerSpec(RefinerMode.REMOTE, endpoint=url + "/slow", timeout=0.2))
        assert r("slow text") == "slow text"
        assert "passing text through" in r.warnings[0]


def test_remote_unreachable_falls_back():
    r = Refiner(RefinerSpec(RefinerMode.REMOTE, endpoint="http://127.0.0.1:9/", timeout=0.5))
    assert r("x") == "x"


def test_remote_many_keeps_order():
    with running() as url:
        r = Refiner(RefinerSpec(RefinerMode.REMOTE, endpoint=url, timeout=5, max_connections=4))
        texts = [f"t{i}" for i in range(20)]
        assert r.many(texts) == [t.upper() for t in texts]


def test_refined_tokens_in_closed_classes(mapping_file):
    spec = RefinerSpec(RefinerMode.MAPPING_FILE, mapping_path=mapping_file)
    text = 'v1 = sub_E6D18(a1, "msg x") + 0x10; if (v1 >= dword_162354) return -1;'
    for tok, cls in lex_pseudo(refine(text, spec)):
        assert isinstance(cls, TokenClass)
