#include "keymem/synthdata.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace keymem {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kTemplateWords = {"The", "relationship", "between", "and", "is"};
const std::string kCoRisk = "co_risk";
const std::string kIncreasesRisk = "increases_risk_of";
const std::string kDeath = "DEATH";
const std::string kReadmit = "READMIT";
const std::string kGapShort = "gap_short";
const std::string kGapLong = "gap_long";

std::string code_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "code_%03zu", i);
    return buf;
}

std::string pair_name(std::size_t i) {
    return "pair_" + std::to_string(i);
}

}  // namespace

void GeneratorConfig::validate() const {
    if (label_noise < 0.0 || label_noise >= 0.5) {
        throw std::invalid_argument("GeneratorConfig: label_noise must be in [0, 0.5)");
    }
    if (mortality_prevalence <= 0.0 || mortality_prevalence >= 1.0 ||
        readmission_prevalence <= 0.0 || readmission_prevalence >= 1.0) {
        throw std::invalid_argument("GeneratorConfig: prevalence must be in (0, 1)");
    }
    if (readmission_window_days <= 0) {
        throw std::invalid_argument("GeneratorConfig: readmission window must be positive");
    }
    if (visits_min < 1 || visits_max < visits_min || codes_min < 1 || codes_max < codes_min) {
        throw std::invalid_argument("GeneratorConfig: bad visit/code ranges");
    }
    if (n_patients == 0 || n_risk_pairs == 0 || n_readmit_pairs == 0) {
        throw std::invalid_argument("GeneratorConfig: zero-sized generation request");
    }
    const std::size_t reserved =
        kTemplateWords.size() + 2 + 2 + 2 + n_risk_pairs + n_readmit_pairs;
    const std::size_t pair_codes = 2 * (n_risk_pairs + n_readmit_pairs);
    if (vocab_size < reserved + pair_codes + 8) {
        throw std::invalid_argument(
            "GeneratorConfig: vocabulary too small for the requested pairs");
    }
}

std::size_t Vocabulary::id(const std::string& symbol) const {
    const auto it = index.find(symbol);
    if (it == index.end()) {
        throw std::invalid_argument("Vocabulary: unknown symbol '" + symbol + "'");
    }
    return it->second;
}

Vocabulary Vocabulary::from_symbols(std::vector<std::string> symbols) {
    Vocabulary v;
    v.symbols = std::move(symbols);
    for (std::size_t i = 0; i < v.symbols.size(); ++i) {
        if (!v.index.emplace(v.symbols[i], i).second) {
            throw std::invalid_argument("Vocabulary: duplicate symbol '" + v.symbols[i] + "'");
        }
    }
    return v;
}

Vocabulary Vocabulary::build(const GeneratorConfig& config) {
    config.validate();
    std::vector<std::string> symbols = kTemplateWords;
    symbols.push_back(kCoRisk);
    symbols.push_back(kIncreasesRisk);
    symbols.push_back(kDeath);
    symbols.push_back(kReadmit);
    symbols.push_back(kGapShort);
    symbols.push_back(kGapLong);
    for (std::size_t i = 0; i < config.n_risk_pairs + config.n_readmit_pairs; ++i) {
        symbols.push_back(pair_name(i));
    }
    const std::size_t n_codes = config.vocab_size - symbols.size();
    for (std::size_t i = 0; i < n_codes; ++i) {
        symbols.push_back(code_name(i));
    }
    return from_symbols(std::move(symbols));
}

std::vector<const SyntheticRecord*> Dataset::split_records(const std::string& split) const {
    std::vector<const SyntheticRecord*> out;
    for (const auto& r : records) {
        if (r.split == split) out.push_back(&r);
    }
    return out;
}

namespace {

bool contains_pair(const SyntheticRecord& r, const CodePair& p) {
    bool has_a = false, has_b = false;
    for (const auto& visit : r.visits) {
        for (const auto& c : visit) {
            has_a = has_a || c == p.a;
            has_b = has_b || c == p.b;
        }
    }
    return has_a && has_b;
}

void insert_adjacent(SyntheticRecord& r, Rng& rng, const std::string& c1,
                     const std::string& c2) {
    auto& visit = r.visits[rng.uniform_index(r.visits.size())];
    const std::size_t pos = rng.uniform_index(visit.size() + 1);
    visit.insert(visit.begin() + static_cast<std::ptrdiff_t>(pos), {c1, c2});
}

void insert_single(SyntheticRecord& r, Rng& rng, const std::string& c) {
    auto& visit = r.visits[rng.uniform_index(r.visits.size())];
    const std::size_t pos = rng.uniform_index(visit.size() + 1);
    visit.insert(visit.begin() + static_cast<std::ptrdiff_t>(pos), c);
}

// Positive records get one full pair, adjacent, in a random visit. Negatives
// get a decoy with the same insertion geometry: two codes from different
// pairs, a lone pair code, or nothing.
void inject_codes(SyntheticRecord& r, Rng& rng, const std::vector<CodePair>& pairs,
                  bool positive) {
    if (positive) {
        const CodePair& p = pairs[rng.uniform_index(pairs.size())];
        insert_adjacent(r, rng, p.a, p.b);
        return;
    }
    const double u = rng.next_double();
    if (u < 0.5 && pairs.size() >= 2) {
        const std::size_t i = rng.uniform_index(pairs.size());
        const std::size_t j = (i + 1 + rng.uniform_index(pairs.size() - 1)) % pairs.size();
        const std::string& c1 = rng.next_double() < 0.5 ? pairs[i].a : pairs[i].b;
        const std::string& c2 = rng.next_double() < 0.5 ? pairs[j].a : pairs[j].b;
        insert_adjacent(r, rng, c1, c2);
    } else if (u < 0.75) {
        const CodePair& p = pairs[rng.uniform_index(pairs.size())];
        insert_single(r, rng, rng.next_double() < 0.5 ? p.a : p.b);
    }
}

}  // namespace

Dataset generate(const GeneratorConfig& config) {
    config.validate();
    Dataset ds;
    ds.config = config;
    ds.vocab = Vocabulary::build(config);
    Rng master(config.seed);

    // Pair codes drawn from a shuffled code pool; the rest are fillers.
    const std::size_t n_codes =
        config.vocab_size - (kTemplateWords.size() + 6 + config.n_risk_pairs +
                             config.n_readmit_pairs);
    std::vector<std::string> pool;
    pool.reserve(n_codes);
    for (std::size_t i = 0; i < n_codes; ++i) pool.push_back(code_name(i));
    master.shuffle(pool);

    std::size_t next = 0;
    for (std::size_t k = 0; k < config.n_risk_pairs; ++k) {
        ds.mortality_pairs.push_back({pool[next], pool[next + 1]});
        next += 2;
    }
    for (std::size_t k = 0; k < config.n_readmit_pairs; ++k) {
        ds.readmission_pairs.push_back({pool[next], pool[next + 1]});
        next += 2;
    }
    const std::vector<std::string> fillers(pool.begin() + static_cast<std::ptrdiff_t>(next),
                                           pool.end());

    for (std::size_t k = 0; k < config.n_risk_pairs; ++k) {
        ds.triples.push_back({ds.mortality_pairs[k].a, kCoRisk, ds.mortality_pairs[k].b});
        ds.triples.push_back({pair_name(k), kIncreasesRisk, kDeath});
    }
    for (std::size_t k = 0; k < config.n_readmit_pairs; ++k) {
        ds.triples.push_back({ds.readmission_pairs[k].a, kCoRisk, ds.readmission_pairs[k].b});
        ds.triples.push_back({pair_name(config.n_risk_pairs + k), kIncreasesRisk, kReadmit});
    }

    // Document corpus: co-occurrence sentences, half of them featuring a
    // planted pair in adjacent positions.
    Rng corpus_rng = master.fork(1);
    std::vector<CodePair> all_pairs = ds.mortality_pairs;
    all_pairs.insert(all_pairs.end(), ds.readmission_pairs.begin(), ds.readmission_pairs.end());
    for (std::size_t i = 0; i < config.n_corpus_docs; ++i) {
        std::vector<std::string> line;
        const std::size_t n_fill = 2 + corpus_rng.uniform_index(5);
        for (std::size_t t = 0; t < n_fill; ++t) {
            line.push_back(fillers[corpus_rng.uniform_index(fillers.size())]);
        }
        if (corpus_rng.next_double() < 0.5) {
            const CodePair& p = all_pairs[corpus_rng.uniform_index(all_pairs.size())];
            const std::size_t pos = corpus_rng.uniform_index(line.size() + 1);
            line.insert(line.begin() + static_cast<std::ptrdiff_t>(pos), {p.a, p.b});
        }
        ds.corpus.push_back(std::move(line));
    }

    ds.records.reserve(config.n_patients);
    for (std::size_t p = 0; p < config.n_patients; ++p) {
        Rng rng = master.fork(3 + p);
        SyntheticRecord r;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "p%05zu", p);
        r.patient_id = idbuf;

        const bool want_mort = rng.next_double() < config.mortality_prevalence;
        const bool want_re = rng.next_double() < config.readmission_prevalence;

        std::size_t n_visits = static_cast<std::size_t>(
            rng.uniform_int(static_cast<long>(config.visits_min),
                            static_cast<long>(config.visits_max)));
        if (want_re && n_visits < 2) n_visits = 2;

        r.visits.resize(n_visits);
        for (auto& visit : r.visits) {
            const std::size_t n = static_cast<std::size_t>(
                rng.uniform_int(static_cast<long>(config.codes_min),
                                static_cast<long>(config.codes_max)));
            for (std::size_t t = 0; t < n; ++t) {
                visit.push_back(fillers[rng.uniform_index(fillers.size())]);
            }
        }
        const long alpha = config.readmission_window_days;
        for (std::size_t g = 0; g + 1 < n_visits; ++g) {
            r.gaps_days.push_back(rng.next_double() < 0.5 ? rng.uniform_int(1, alpha)
                                                          : rng.uniform_int(alpha + 1,
                                                                            alpha + 30));
        }

        inject_codes(r, rng, ds.mortality_pairs, want_mort);

        if (want_re) {
            inject_codes(r, rng, ds.readmission_pairs, true);
            bool any_short = false;
            for (const long g : r.gaps_days) any_short = any_short || g <= alpha;
            if (!any_short) {
                r.gaps_days[rng.uniform_index(r.gaps_days.size())] = rng.uniform_int(1, alpha);
            }
        } else {
            const double u = rng.next_double();
            if (u < 0.3 && n_visits >= 2) {
                // Pair complete but every gap outside the window: the
                // temporal half of the rule has to matter.
                inject_codes(r, rng, ds.readmission_pairs, true);
                for (auto& g : r.gaps_days) {
                    if (g <= alpha) g = rng.uniform_int(alpha + 1, alpha + 30);
                }
            } else {
                inject_codes(r, rng, ds.readmission_pairs, false);
            }
        }

        r.true_mortality = derive_mortality(r, ds.mortality_pairs);
        r.true_readmission = derive_readmission(r, ds.readmission_pairs, alpha);
        r.mortality_label =
            rng.next_double() < config.label_noise ? 1 - r.true_mortality : r.true_mortality;
        r.readmission_label =
            rng.next_double() < config.label_noise ? 1 - r.true_readmission : r.true_readmission;
        ds.records.push_back(std::move(r));
    }

    // Patient-grouped split: every record of a patient lands in one subset.
    Rng split_rng = master.fork(2);
    std::vector<std::size_t> order(config.n_patients);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    split_rng.shuffle(order);
    const std::size_t n_train = (config.n_patients * 8 + 5) / 10;
    const std::size_t n_dev = (config.n_patients + 5) / 10;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        auto& rec = ds.records[order[rank]];
        rec.split = rank < n_train ? "train" : rank < n_train + n_dev ? "dev" : "test";
    }
    return ds;
}

int derive_mortality(const SyntheticRecord& r, const std::vector<CodePair>& pairs) {
    for (const auto& p : pairs) {
        if (contains_pair(r, p)) return 1;
    }
    return 0;
}

int derive_readmission(const SyntheticRecord& r, const std::vector<CodePair>& pairs,
                       long alpha) {
    bool short_gap = false;
    for (const long g : r.gaps_days) short_gap = short_gap || g <= alpha;
    if (!short_gap) return 0;
    for (const auto& p : pairs) {
        if (contains_pair(r, p)) return 1;
    }
    return 0;
}

LabelAudit verify_labels(const Dataset& dataset) {
    LabelAudit audit;
    audit.n = dataset.records.size();
    for (const auto& r : dataset.records) {
        const int mort = derive_mortality(r, dataset.mortality_pairs);
        const int re = derive_readmission(r, dataset.readmission_pairs,
                                          dataset.config.readmission_window_days);
        if (mort != r.true_mortality || re != r.true_readmission) {
            throw std::runtime_error("verify_labels: provenance does not match rules for " +
                                     r.patient_id);
        }
        audit.mortality_mismatches += mort != r.mortality_label ? 1 : 0;
        audit.readmission_mismatches += re != r.readmission_label ? 1 : 0;
    }
    return audit;
}

TokenSequence tokenize_record(const SyntheticRecord& r, const Vocabulary& vocab, long alpha) {
    TokenSequence seq;
    for (std::size_t v = 0; v < r.visits.size(); ++v) {
        if (v > 0) {
            seq.token_ids.push_back(
                vocab.id(r.gaps_days[v - 1] <= alpha ? kGapShort : kGapLong));
        }
        for (const auto& c : r.visits[v]) {
            seq.token_ids.push_back(vocab.id(c));
        }
    }
    seq.attention_mask.assign(seq.token_ids.size(), 1);
    return seq;
}

TokenSequence tokenize_line(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
    TokenSequence seq;
    seq.token_ids.reserve(tokens.size());
    for (const auto& t : tokens) seq.token_ids.push_back(vocab.id(t));
    seq.attention_mask.assign(seq.token_ids.size(), 1);
    return seq;
}

namespace {

json config_to_json(const GeneratorConfig& c) {
    return json{{"vocab_size", c.vocab_size},
                {"n_patients", c.n_patients},
                {"visits_min", c.visits_min},
                {"visits_max", c.visits_max},
                {"codes_min", c.codes_min},
                {"codes_max", c.codes_max},
                {"n_risk_pairs", c.n_risk_pairs},
                {"n_readmit_pairs", c.n_readmit_pairs},
                {"label_noise", c.label_noise},
                {"mortality_prevalence", c.mortality_prevalence},
                {"readmission_prevalence", c.readmission_prevalence},
                {"readmission_window_days", c.readmission_window_days},
                {"n_corpus_docs", c.n_corpus_docs},
                {"seed", c.seed}};
}

GeneratorConfig config_from_json(const json& j) {
    GeneratorConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.n_patients = j.at("n_patients").get<std::size_t>();
    c.visits_min = j.at("visits_min").get<std::size_t>();
    c.visits_max = j.at("visits_max").get<std::size_t>();
    c.codes_min = j.at("codes_min").get<std::size_t>();
    c.codes_max = j.at("codes_max").get<std::size_t>();
    c.n_risk_pairs = j.at("n_risk_pairs").get<std::size_t>();
    c.n_readmit_pairs = j.at("n_readmit_pairs").get<std::size_t>();
    c.label_noise = j.at("label_noise").get<double>();
    c.mortality_prevalence = j.at("mortality_prevalence").get<double>();
    c.readmission_prevalence = j.at("readmission_prevalence").get<double>();
    c.readmission_window_days = j.at("readmission_window_days").get<long>();
    c.n_corpus_docs = j.at("n_corpus_docs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "dataset.jsonl");
        for (const auto& r : dataset.records) {
            json j{{"patient_id", r.patient_id},
                   {"visits", r.visits},
                   {"gaps_days", r.gaps_days},
                   {"mortality_label", r.mortality_label},
                   {"readmission_label", r.readmission_label},
                   {"true_mortality", r.true_mortality},
                   {"true_readmission", r.true_readmission},
                   {"split", r.split}};
            out << j.dump() << "\n";
        }
    }
    {
        std::ofstream out(fs::path(dir) / "triples.tsv");
        for (const auto& t : dataset.triples) {
            out << t.head << "\t" << t.relation << "\t" << t.tail << "\n";
        }
    }
    {
        std::ofstream out(fs::path(dir) / "corpus.txt");
        for (const auto& line : dataset.corpus) {
            for (std::size_t i = 0; i < line.size(); ++i) {
                out << (i > 0 ? " " : "") << line[i];
            }
            out << "\n";
        }
    }
    {
        std::ofstream out(fs::path(dir) / "vocab.txt");
        for (const auto& s : dataset.vocab.symbols) out << s << "\n";
    }
    {
        json rules;
        rules["config"] = config_to_json(dataset.config);
        rules["alpha"] = dataset.config.readmission_window_days;
        json mp = json::array(), rp = json::array();
        for (const auto& p : dataset.mortality_pairs) mp.push_back({p.a, p.b});
        for (const auto& p : dataset.readmission_pairs) rp.push_back({p.a, p.b});
        rules["mortality_pairs"] = mp;
        rules["readmission_pairs"] = rp;
        std::ofstream out(fs::path(dir) / "rules.json");
        out << rules.dump(2) << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "dataset.jsonl")) {
        throw std::runtime_error("load_dataset: no dataset.jsonl under " + dir);
    }
    Dataset ds;
    {
        std::ifstream in(root / "rules.json");
        if (!in) throw std::runtime_error("load_dataset: missing rules.json");
        json rules = json::parse(in);
        ds.config = config_from_json(rules.at("config"));
        for (const auto& p : rules.at("mortality_pairs")) {
            ds.mortality_pairs.push_back({p.at(0).get<std::string>(),
                                          p.at(1).get<std::string>()});
        }
        for (const auto& p : rules.at("readmission_pairs")) {
            ds.readmission_pairs.push_back({p.at(0).get<std::string>(),
                                            p.at(1).get<std::string>()});
        }
    }
    {
        std::ifstream in(root / "vocab.txt");
        if (!in) throw std::runtime_error("load_dataset: missing vocab.txt");
        std::vector<std::string> symbols;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) symbols.push_back(line);
        }
        ds.vocab = Vocabulary::from_symbols(std::move(symbols));
    }
    {
        std::ifstream in(root / "dataset.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            SyntheticRecord r;
            r.patient_id = j.at("patient_id").get<std::string>();
            r.visits = j.at("visits").get<std::vector<std::vector<std::string>>>();
            r.gaps_days = j.at("gaps_days").get<std::vector<long>>();
            r.mortality_label = j.at("mortality_label").get<int>();
            r.readmission_label = j.at("readmission_label").get<int>();
            r.true_mortality = j.at("true_mortality").get<int>();
            r.true_readmission = j.at("true_readmission").get<int>();
            r.split = j.at("split").get<std::string>();
            ds.records.push_back(std::move(r));
        }
    }
    {
        std::ifstream in(root / "triples.tsv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ss(line);
            Triple t;
            if (!std::getline(ss, t.head, '\t') || !std::getline(ss, t.relation, '\t') ||
                !std::getline(ss, t.tail)) {
                throw std::runtime_error("load_dataset: malformed triple line: " + line);
            }
            ds.triples.push_back(std::move(t));
        }
    }
    {
        std::ifstream in(root / "corpus.txt");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> tokens;
            std::istringstream ss(line);
            std::string tok;
            while (ss >> tok) tokens.push_back(tok);
            ds.corpus.push_back(std::move(tokens));
        }
    }
    return ds;
}

}  // namespace keymem
