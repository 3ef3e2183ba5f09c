#include <cstdint>
#include <doctest.h>
#include <stdexcept>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "keymem/synthdata.hpp"

#include "test_util.hpp"

using namespace keymem;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig c;
    c.vocab_size = 128;
    c.n_patients = 300;
    c.n_risk_pairs = 6;
    c.n_readmit_pairs = 6;
    c.n_corpus_docs = 80;
    c.seed = 7;
    return c;
}

bool same_record(const SyntheticRecord& a, const SyntheticRecord& b) {
    return a.patient_id == b.patient_id && a.visits == b.visits && a.gaps_days == b.gaps_days &&
           a.mortality_label == b.mortality_label &&
           a.readmission_label == b.readmission_label && a.true_mortality == b.true_mortality &&
           a.true_readmission == b.true_readmission && a.split == b.split;
}

SyntheticRecord record_with(std::vector<std::vector<std::string>> visits,
                            std::vector<long> gaps) {
    SyntheticRecord r;
    r.patient_id = "manual";
    r.visits = std::move(visits);
    r.gaps_days = std::move(gaps);
    return r;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
    GeneratorConfig cfg = small_config();
    Dataset a = generate(cfg);
    Dataset b = generate(cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(same_record(a.records[i], b.records[i]));
    }
    CHECK(a.triples == b.triples);
    CHECK(a.corpus == b.corpus);
    CHECK(a.mortality_pairs == b.mortality_pairs);
    CHECK(a.vocab.symbols == b.vocab.symbols);

    GeneratorConfig other = cfg;
    other.seed = 8;
    Dataset c = generate(other);
    bool differs = false;
    for (std::size_t i = 0; i < a.records.size() && !differs; ++i) {
        differs = !same_record(a.records[i], c.records[i]);
    }
    CHECK(differs);
}

TEST_CASE("default split sizes are 2000/250/250 with unique patients") {
    GeneratorConfig cfg;  // defaults: 2500 patients, seed 42
    Dataset ds = generate(cfg);
    REQUIRE(ds.records.size() == 2500);
    CHECK(ds.split_records("train").size() == 2000);
    CHECK(ds.split_records("dev").size() == 250);
    CHECK(ds.split_records("test").size() == 250);

    std::set<std::string> ids;
    for (const auto& r : ds.records) ids.insert(r.patient_id);
    CHECK(ids.size() == 2500);
    for (const auto& r : ds.records) {
        CHECK((r.split == "train" || r.split == "dev" || r.split == "test"));
    }

    // Both outcomes should sit near their configured prevalence.
    std::size_t mort = 0, re = 0;
    for (const auto& r : ds.records) {
        mort += static_cast<std::size_t>(r.true_mortality);
        re += static_cast<std::size_t>(r.true_readmission);
    }
    const double pm = static_cast<double>(mort) / 2500.0;
    const double pr = static_cast<double>(re) / 2500.0;
    CHECK(pm > 0.07);
    CHECK(pm < 0.13);
    CHECK(pr > 0.07);
    CHECK(pr < 0.13);
}

TEST_CASE("stored noisy labels differ from rule labels at the noise rate") {
    GeneratorConfig cfg = small_config();
    cfg.n_patients = 2500;
    cfg.label_noise = 0.05;
    Dataset ds = generate(cfg);
    LabelAudit audit = verify_labels(ds);
    CHECK(audit.n == 2500);
    // Binomial(2500, 0.05) stays inside [75, 175] except with vanishing odds.
    CHECK(audit.mortality_mismatches >= 75);
    CHECK(audit.mortality_mismatches <= 175);
    CHECK(audit.readmission_mismatches >= 75);
    CHECK(audit.readmission_mismatches <= 175);

    GeneratorConfig clean = small_config();
    clean.label_noise = 0.0;
    LabelAudit none = verify_labels(generate(clean));
    CHECK(none.mortality_mismatches == 0);
    CHECK(none.readmission_mismatches == 0);
}

TEST_CASE("rule derivation on hand-built records") {
    std::vector<CodePair> pairs = {{"x1", "x2"}, {"y1", "y2"}};
    const long alpha = 15;

    // Pair split across visits still counts.
    auto split_pair = record_with({{"f1", "x1"}, {"x2", "f2"}}, {10});
    CHECK(derive_mortality(split_pair, pairs) == 1);
    CHECK(derive_readmission(split_pair, pairs, alpha) == 1);

    // One code alone never fires.
    auto lone = record_with({{"x1", "f1"}, {"f2"}}, {10});
    CHECK(derive_mortality(lone, pairs) == 0);
    CHECK(derive_readmission(lone, pairs, alpha) == 0);

    // Codes from two different pairs never fire.
    auto crossed = record_with({{"x1", "y2", "f1"}}, {});
    CHECK(derive_mortality(crossed, pairs) == 0);

    // The readmission rule needs a gap inside the window.
    auto long_gap = record_with({{"y1"}, {"y2"}}, {30});
    CHECK(derive_mortality(long_gap, pairs) == 1);
    CHECK(derive_readmission(long_gap, pairs, alpha) == 0);
    auto edge_gap = record_with({{"y1"}, {"y2"}}, {15});
    CHECK(derive_readmission(edge_gap, pairs, alpha) == 1);

    // A single visit has no gaps at all.
    auto single = record_with({{"x1", "x2"}}, {});
    CHECK(derive_mortality(single, pairs) == 1);
    CHECK(derive_readmission(single, pairs, alpha) == 0);
}

TEST_CASE("every record obeys its own stored rule provenance") {
    Dataset ds = generate(small_config());
    CHECK_NOTHROW(verify_labels(ds));

    // Tampering with a record makes the audit fail loudly.
    Dataset broken = generate(small_config());
    broken.records[0].true_mortality = 1 - broken.records[0].true_mortality;
    CHECK_THROWS_AS(verify_labels(broken), std::runtime_error);
}

TEST_CASE("vocabulary layout is deterministic and complete") {
    GeneratorConfig cfg = small_config();
    Vocabulary v = Vocabulary::build(cfg);
    REQUIRE(v.size() == cfg.vocab_size);
    CHECK(v.symbols[0] == "The");
    CHECK(v.symbols[1] == "relationship");
    CHECK(v.symbols[2] == "between");
    CHECK(v.symbols[3] == "and");
    CHECK(v.symbols[4] == "is");
    CHECK(v.contains("co_risk"));
    CHECK(v.contains("increases_risk_of"));
    CHECK(v.contains("DEATH"));
    CHECK(v.contains("READMIT"));
    CHECK(v.contains("gap_short"));
    CHECK(v.contains("gap_long"));
    CHECK(v.contains("pair_0"));
    CHECK(v.contains("pair_11"));
    CHECK_FALSE(v.contains("pair_12"));
    CHECK(v.contains("code_000"));
    CHECK(v.id(v.symbols[37]) == 37);
    CHECK_THROWS_AS(v.id("no_such_symbol"), std::invalid_argument);
    CHECK_THROWS_AS(Vocabulary::from_symbols({"a", "b", "a"}), std::invalid_argument);
}

TEST_CASE("pair codes are disjoint from filler codes in visits") {
    Dataset ds = generate(small_config());
    std::set<std::string> pair_codes;
    for (const auto& p : ds.mortality_pairs) {
        pair_codes.insert(p.a);
        pair_codes.insert(p.b);
    }
    for (const auto& p : ds.readmission_pairs) {
        pair_codes.insert(p.a);
        pair_codes.insert(p.b);
    }
    CHECK(pair_codes.size() == 2 * (ds.mortality_pairs.size() + ds.readmission_pairs.size()));

    // Records without the outcome never contain a complete rule pair, so the
    // only route to a positive label is the planted injection.
    for (const auto& r : ds.records) {
        CHECK(derive_mortality(r, ds.mortality_pairs) == r.true_mortality);
    }
}

TEST_CASE("graph triples cover every planted pair and its outcome link") {
    GeneratorConfig cfg = small_config();
    Dataset ds = generate(cfg);
    REQUIRE(ds.triples.size() == 2 * (cfg.n_risk_pairs + cfg.n_readmit_pairs));
    for (std::size_t k = 0; k < cfg.n_risk_pairs; ++k) {
        CHECK(ds.triples[2 * k] ==
              Triple{ds.mortality_pairs[k].a, "co_risk", ds.mortality_pairs[k].b});
        CHECK(ds.triples[2 * k + 1] ==
              Triple{"pair_" + std::to_string(k), "increases_risk_of", "DEATH"});
    }
    const std::size_t base = 2 * cfg.n_risk_pairs;
    CHECK(ds.triples[base + 1].tail == "READMIT");
}

TEST_CASE("record tokenization inserts gap-bucket tokens between visits") {
    GeneratorConfig cfg = small_config();
    Vocabulary v = Vocabulary::build(cfg);
    SyntheticRecord r = record_with({{"code_000", "code_001"}, {"code_002"}, {"code_003"}},
                                    {5, 20});
    TokenSequence seq = tokenize_record(r, v, 15);
    REQUIRE(seq.length() == 6);
    CHECK(seq.token_ids[0] == v.id("code_000"));
    CHECK(seq.token_ids[1] == v.id("code_001"));
    CHECK(seq.token_ids[2] == v.id("gap_short"));
    CHECK(seq.token_ids[3] == v.id("code_002"));
    CHECK(seq.token_ids[4] == v.id("gap_long"));
    CHECK(seq.token_ids[5] == v.id("code_003"));
    CHECK(seq.attention_mask == std::vector<std::uint8_t>(6, 1));

    TokenSequence line = tokenize_line({"The", "relationship", "between"}, v);
    CHECK(line.token_ids == std::vector<std::size_t>{0, 1, 2});
    CHECK_THROWS_AS(tokenize_line({"bogus"}, v), std::invalid_argument);
}

TEST_CASE("dataset written to disk loads back identically") {
    TempDir dir("synthdata");
    GeneratorConfig cfg = small_config();
    Dataset ds = generate(cfg);
    write_dataset(ds, dir.str());

    Dataset back = load_dataset(dir.str());
    CHECK(back.config.vocab_size == cfg.vocab_size);
    CHECK(back.config.n_patients == cfg.n_patients);
    CHECK(back.config.label_noise == cfg.label_noise);
    CHECK(back.config.seed == cfg.seed);
    CHECK(back.vocab.symbols == ds.vocab.symbols);
    CHECK(back.mortality_pairs == ds.mortality_pairs);
    CHECK(back.readmission_pairs == ds.readmission_pairs);
    CHECK(back.triples == ds.triples);
    CHECK(back.corpus == ds.corpus);
    REQUIRE(back.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(same_record(back.records[i], ds.records[i]));
    }
    CHECK_NOTHROW(verify_labels(back));

    CHECK_THROWS_AS(load_dataset(dir.sub("missing")), std::runtime_error);
}

TEST_CASE("generator config validation") {
    GeneratorConfig cfg = small_config();
    cfg.label_noise = 0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.mortality_prevalence = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.visits_max = 1;
    cfg.visits_min = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.vocab_size = 40;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.readmission_window_days = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
