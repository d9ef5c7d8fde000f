#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cgaug/common.hpp"
#include "cgaug/corpus.hpp"

using namespace cgaug;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream f(path);
    f << content;
    return path.string();
}

SynthSpec small_spec() {
    SynthSpec spec;
    spec.n_labels = 3;
    spec.phrases_per_label = 2;
    spec.filler_vocab_size = 5;
    spec.composition_list = {LabelSet({0}), LabelSet({1}), LabelSet({2}), LabelSet({0, 1})};
    spec.instances_per_composition = 10;
    spec.seed = 42;
    return spec;
}

}  // namespace

TEST_CASE("label set canonical form") {
    LabelSet s({3, 1, 3, 2});
    CHECK(s.size() == 3);
    CHECK(s.ids() == std::vector<int>{1, 2, 3});
    s.insert(0);
    s.insert(2);
    CHECK(s.ids() == std::vector<int>{0, 1, 2, 3});
    CHECK(s.contains(3));
    CHECK_FALSE(s.contains(9));
    CHECK(LabelSet({0, 1}).subset_of(LabelSet({0, 1, 2})));
    CHECK_FALSE(LabelSet({0, 4}).subset_of(LabelSet({0, 1, 2})));
    CHECK(LabelSet().subset_of(LabelSet()));
}

TEST_CASE("vocab specials, interning and round trip") {
    Vocab v;
    CHECK(v.size() == 5);
    CHECK(v.id("<unk>") == Vocab::kUnk);
    int a = v.add("hello");
    CHECK(v.add("hello") == a);
    CHECK(v.id("absent") == -1);
    CHECK_THROWS_AS((void)v.encode("hello absent", false), ParseError);
    auto ids = v.encode("Hello HELLO", true);
    CHECK(ids == std::vector<int>{a, a});
    CHECK(v.decode(ids) == "hello hello");
}

TEST_CASE("load_jsonl basics") {
    std::string path = write_temp("cgaug_basic.jsonl",
                                  "{\"text\":\"I am sad\",\"labels\":[\"sadness\"]}\n");
    Dataset d = load_jsonl(path);
    REQUIRE(d.instances.size() == 1);
    const Instance& inst = d.instances[0];
    CHECK(inst.tokens.size() == 3);
    CHECK(d.vocab.decode(inst.tokens) == "i am sad");
    REQUIRE(d.label_table.size() == 1);
    CHECK(d.label_table[0].phrase == "sadness");
    CHECK(inst.labels == LabelSet({0}));
    std::remove(path.c_str());
}

TEST_CASE("load_jsonl rejects empty text and bad structure") {
    std::string p1 = write_temp("cgaug_empty.jsonl", "{\"text\":\"\",\"labels\":[\"joy\"]}\n");
    CHECK_THROWS_AS((void)load_jsonl(p1), SchemaError);
    std::remove(p1.c_str());

    std::string p2 = write_temp("cgaug_malformed.jsonl", "{not json\n");
    CHECK_THROWS_WITH_AS((void)load_jsonl(p2), doctest::Contains(":1:"), ParseError);
    std::remove(p2.c_str());

    std::string p3 = write_temp("cgaug_schema.jsonl", "{\"text\":\"ok\",\"labels\":\"joy\"}\n");
    CHECK_THROWS_AS((void)load_jsonl(p3), SchemaError);
    std::remove(p3.c_str());
}

TEST_CASE("labels interned in first-seen order") {
    std::string path = write_temp(
        "cgaug_order.jsonl",
        "{\"text\":\"x y\",\"labels\":[\"a\"]}\n{\"text\":\"y z\",\"labels\":[\"a\",\"b\"]}\n");
    Dataset d = load_jsonl(path);
    REQUIRE(d.label_table.size() == 2);
    CHECK(d.label_id("a") == 0);
    CHECK(d.label_id("b") == 1);
    std::remove(path.c_str());
}

TEST_CASE("jsonl round trip reproduces the dataset") {
    std::string path = write_temp("cgaug_rt.jsonl",
                                  "{\"text\":\"Big Cats sleep\",\"labels\":[\"animals\"]}\n"
                                  "{\"text\":\"rockets fly high\",\"labels\":[]}\n"
                                  "{\"text\":\"cats fly\",\"labels\":[\"animals\",\"odd\"]}\n");
    Dataset d1 = load_jsonl(path);
    std::string path2 = write_temp("cgaug_rt2.jsonl", "");
    save_jsonl(d1, path2);
    Dataset d2 = load_jsonl(path2);
    // first-seen interning over the serialized form reproduces everything
    REQUIRE(d2.instances.size() == d1.instances.size());
    CHECK(d2.vocab == d1.vocab);
    for (std::size_t i = 0; i < d1.instances.size(); ++i) {
        CHECK(d2.instances[i] == d1.instances[i]);
    }
    // and a second round trip is a fixed point
    std::string path3 = write_temp("cgaug_rt3.jsonl", "");
    save_jsonl(d2, path3);
    Dataset d3 = load_jsonl(path3);
    CHECK(d3.vocab == d2.vocab);
    CHECK(d3.instances == d2.instances);
    std::remove(path.c_str());
    std::remove(path2.c_str());
    std::remove(path3.c_str());
}

TEST_CASE("label table save/load") {
    std::vector<Label> ls = {{0, "joy"}, {1, "anger"}};
    auto path = (std::filesystem::temp_directory_path() / "cgaug_labels.json").string();
    save_labels(ls, path);
    auto back = load_labels(path);
    REQUIRE(back.size() == 2);
    CHECK(back[1].phrase == "anger");
    CHECK(back[1].id == 1);
    std::remove(path.c_str());
}

TEST_CASE("generate_synth construction and counts") {
    SynthSpec spec = small_spec();
    Dataset d = generate_synth(spec);
    // 4 compositions, 10 each
    CHECK(d.instances.size() == 40);
    auto comps = d.compositions();
    REQUIRE(comps.size() == 4);
    for (const auto& [comp, idx] : comps) CHECK(idx.size() == 10);

    // every {0,1} instance carries one phrase of each label
    for (const auto& inst : d.instances) {
        if (inst.labels == LabelSet({0, 1})) {
            LabelSet got = oracle_labels(inst.tokens, spec, d.vocab);
            CHECK(got == LabelSet({0, 1}));
        }
    }
}

TEST_CASE("generate_synth is deterministic under seed") {
    SynthSpec spec = small_spec();
    Dataset a = generate_synth(spec);
    Dataset b = generate_synth(spec);
    CHECK(a.vocab == b.vocab);
    CHECK(a.instances == b.instances);
    spec.seed = 43;
    Dataset c = generate_synth(spec);
    CHECK(a.instances != c.instances);
}

TEST_CASE("generate_synth rejects unknown label ids") {
    SynthSpec spec = small_spec();
    spec.composition_list.push_back(LabelSet({7}));
    CHECK_THROWS_AS((void)generate_synth(spec), SchemaError);
}

TEST_CASE("oracle_labels on hand-built token streams") {
    SynthSpec spec = small_spec();
    Dataset d = generate_synth(spec);
    auto phrase = [&](int label, int j) {
        std::vector<int> out;
        for (const auto& w : spec.signature_phrase(label, j)) out.push_back(d.vocab.id(w));
        return out;
    };
    // A-phrase + filler + C-phrase -> {A, C}
    std::vector<int> tokens = phrase(0, 1);
    tokens.push_back(d.vocab.id(spec.filler_token(0)));
    auto c = phrase(2, 0);
    tokens.insert(tokens.end(), c.begin(), c.end());
    CHECK(oracle_labels(tokens, spec, d.vocab) == LabelSet({0, 2}));

    // only filler -> {}
    std::vector<int> fillers = {d.vocab.id(spec.filler_token(1)), d.vocab.id(spec.filler_token(2))};
    CHECK(oracle_labels(fillers, spec, d.vocab).empty());

    // a broken-up two-token phrase does not count as contiguous
    auto two = phrase(1, 1);
    REQUIRE(two.size() == 2);
    std::vector<int> split = {two[0], d.vocab.id(spec.filler_token(0)), two[1]};
    CHECK(oracle_labels(split, spec, d.vocab).empty());
}

TEST_CASE("oracle recovers the composition for every generated instance") {
    SynthSpec spec = small_spec();
    spec.composition_list.push_back(LabelSet({0, 1, 2}));
    spec.instances_per_composition = 20;
    Dataset d = generate_synth(spec);
    for (const auto& inst : d.instances) {
        CHECK(oracle_labels(inst.tokens, spec, d.vocab) == inst.labels);
    }
}

TEST_CASE("tokenize-detokenize is token-identical on generated text") {
    SynthSpec spec = small_spec();
    Dataset d = generate_synth(spec);
    for (const auto& inst : d.instances) {
        std::string text = d.vocab.decode(inst.tokens);
        CHECK(d.vocab.encode(text, false) == inst.tokens);
    }
}

TEST_CASE("synth weights scale instance counts") {
    SynthSpec spec = small_spec();
    spec.composition_weights = {1.0, 2.0, 1.0, 0.5};
    Dataset d = generate_synth(spec);
    auto comps = d.compositions();
    CHECK(comps.at(LabelSet({1})).size() == 20);
    CHECK(comps.at(LabelSet({0, 1})).size() == 5);
}

TEST_CASE("dataset subset shares vocab and labels") {
    SynthSpec spec = small_spec();
    Dataset d = generate_synth(spec);
    Dataset s = d.subset({0, 5, 7});
    CHECK(s.instances.size() == 3);
    CHECK(s.vocab == d.vocab);
    CHECK(s.instances[1] == d.instances[5]);
}
