#include "keymem/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace keymem {

namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

Activation parse_activation(const std::string& name) {
    if (name == "gelu") return Activation::kGelu;
    if (name == "relu") return Activation::kRelu;
    throw std::invalid_argument("unknown activation: " + name);
}

std::string activation_name(Activation a) {
    return a == Activation::kGelu ? "gelu" : "relu";
}

json generator_json(const GeneratorConfig& g) {
    return {{"vocab_size", g.vocab_size},
            {"n_patients", g.n_patients},
            {"visits_min", g.visits_min},
            {"visits_max", g.visits_max},
            {"codes_min", g.codes_min},
            {"codes_max", g.codes_max},
            {"n_risk_pairs", g.n_risk_pairs},
            {"n_readmit_pairs", g.n_readmit_pairs},
            {"label_noise", g.label_noise},
            {"mortality_prevalence", g.mortality_prevalence},
            {"readmission_prevalence", g.readmission_prevalence},
            {"readmission_window_days", g.readmission_window_days},
            {"n_corpus_docs", g.n_corpus_docs},
            {"seed", g.seed}};
}

void read_generator(const json& j, GeneratorConfig& g) {
    read_key(j, "vocab_size", g.vocab_size);
    read_key(j, "n_patients", g.n_patients);
    read_key(j, "visits_min", g.visits_min);
    read_key(j, "visits_max", g.visits_max);
    read_key(j, "codes_min", g.codes_min);
    read_key(j, "codes_max", g.codes_max);
    read_key(j, "n_risk_pairs", g.n_risk_pairs);
    read_key(j, "n_readmit_pairs", g.n_readmit_pairs);
    read_key(j, "label_noise", g.label_noise);
    read_key(j, "mortality_prevalence", g.mortality_prevalence);
    read_key(j, "readmission_prevalence", g.readmission_prevalence);
    read_key(j, "readmission_window_days", g.readmission_window_days);
    read_key(j, "n_corpus_docs", g.n_corpus_docs);
    read_key(j, "seed", g.seed);
}

json encoder_json(const EncoderConfig& e) {
    return {{"vocab_size", e.vocab_size},
            {"d_model", e.d_model},
            {"n_layers", e.n_layers},
            {"n_heads", e.n_heads},
            {"d_ff", e.d_ff},
            {"max_seq_len", e.max_seq_len},
            {"dropout_rate", e.dropout_rate},
            {"init_std", e.init_std},
            {"activation", activation_name(e.activation)}};
}

void read_encoder(const json& j, EncoderConfig& e) {
    read_key(j, "vocab_size", e.vocab_size);
    read_key(j, "d_model", e.d_model);
    read_key(j, "n_layers", e.n_layers);
    read_key(j, "n_heads", e.n_heads);
    read_key(j, "d_ff", e.d_ff);
    read_key(j, "max_seq_len", e.max_seq_len);
    read_key(j, "dropout_rate", e.dropout_rate);
    read_key(j, "init_std", e.init_std);
    if (j.contains("activation")) e.activation = parse_activation(j.at("activation"));
}

json infusion_json(const InfusionConfig& i) {
    return {{"epochs", i.epochs},
            {"batch_size", i.batch_size},
            {"learning_rate", i.optimizer.learning_rate},
            {"weight_decay", i.optimizer.weight_decay},
            {"holdout_fraction", i.holdout_fraction},
            {"seed", i.seed}};
}

void read_infusion(const json& j, InfusionConfig& i) {
    read_key(j, "epochs", i.epochs);
    read_key(j, "batch_size", i.batch_size);
    read_key(j, "learning_rate", i.optimizer.learning_rate);
    read_key(j, "weight_decay", i.optimizer.weight_decay);
    read_key(j, "holdout_fraction", i.holdout_fraction);
    read_key(j, "seed", i.seed);
}

json train_json(const TrainConfig& t) {
    return {{"learning_rate", t.learning_rate},
            {"adam_epsilon", t.adam_epsilon},
            {"weight_decay", t.weight_decay},
            {"batch_size", t.batch_size},
            {"max_epochs", t.max_epochs},
            {"patience", t.patience},
            {"use_dropout", t.use_dropout},
            {"seed", t.seed}};
}

void read_train(const json& j, TrainConfig& t) {
    read_key(j, "learning_rate", t.learning_rate);
    read_key(j, "adam_epsilon", t.adam_epsilon);
    read_key(j, "weight_decay", t.weight_decay);
    read_key(j, "batch_size", t.batch_size);
    read_key(j, "max_epochs", t.max_epochs);
    read_key(j, "patience", t.patience);
    read_key(j, "use_dropout", t.use_dropout);
    read_key(j, "seed", t.seed);
}

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0 || adam_epsilon <= 0.0) {
        throw std::invalid_argument("train: learning_rate and adam_epsilon must be positive");
    }
    if (weight_decay < 0.0) throw std::invalid_argument("train: negative weight_decay");
    if (batch_size == 0 || max_epochs == 0) {
        throw std::invalid_argument("train: batch_size and max_epochs must be positive");
    }
}

void RunConfig::validate() const {
    generator.validate();
    encoder.validate();
    train.validate();
    if (task != "mortality" && task != "readmission") {
        throw std::invalid_argument("unknown task: " + task);
    }
    parse_variant(variant);
    parse_probe_kind(probe);
    parse_similarity(similarity);
    if (chunk_len < 2) throw std::invalid_argument("chunk_len must be >= 2");
    if (top_k == 0) throw std::invalid_argument("top_k must be >= 1");
    if (lora_rank == 0) throw std::invalid_argument("lora_rank must be >= 1");
    if (ca_heads == 0 || encoder.d_model % ca_heads != 0) {
        throw std::invalid_argument("ca_heads must divide d_model");
    }
    if (head_hidden == 0) throw std::invalid_argument("head_hidden must be >= 1");
    const int n = static_cast<int>(encoder.n_layers);
    if (memory_layer < -n || memory_layer >= n) {
        throw std::invalid_argument("memory_layer out of range for " + std::to_string(n) +
                                    " layers");
    }
    if (generator.vocab_size != encoder.vocab_size) {
        throw std::invalid_argument("generator and encoder vocab_size must match");
    }
}

std::size_t RunConfig::resolved_layer() const {
    const int n = static_cast<int>(encoder.n_layers);
    const int idx = memory_layer < 0 ? memory_layer + n : memory_layer;
    if (idx < 0 || idx >= n) {
        throw std::invalid_argument("memory_layer out of range");
    }
    return static_cast<std::size_t>(idx);
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.encoder.d_model = 32;
    cfg.encoder.n_layers = 2;
    cfg.encoder.n_heads = 2;
    cfg.encoder.d_ff = 64;
    cfg.encoder.max_seq_len = 48;
    cfg.doc_infusion.epochs = 6;
    cfg.doc_infusion.seed = 7;
    cfg.graph_infusion.epochs = 40;
    cfg.graph_infusion.seed = 11;
    return cfg;
}

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");

    RunConfig cfg = default_run_config();
    if (j.contains("generator")) read_generator(j.at("generator"), cfg.generator);
    if (j.contains("encoder")) read_encoder(j.at("encoder"), cfg.encoder);
    if (j.contains("doc_infusion")) read_infusion(j.at("doc_infusion"), cfg.doc_infusion);
    if (j.contains("graph_infusion")) read_infusion(j.at("graph_infusion"), cfg.graph_infusion);
    if (j.contains("train")) read_train(j.at("train"), cfg.train);
    read_key(j, "task", cfg.task);
    read_key(j, "variant", cfg.variant);
    read_key(j, "probe", cfg.probe);
    read_key(j, "similarity", cfg.similarity);
    read_key(j, "chunk_len", cfg.chunk_len);
    read_key(j, "top_k", cfg.top_k);
    read_key(j, "memory_layer", cfg.memory_layer);
    read_key(j, "lora_rank", cfg.lora_rank);
    read_key(j, "ca_heads", cfg.ca_heads);
    read_key(j, "head_hidden", cfg.head_hidden);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("config: cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string run_config_json(const RunConfig& cfg) {
    json j{{"generator", generator_json(cfg.generator)},
           {"encoder", encoder_json(cfg.encoder)},
           {"doc_infusion", infusion_json(cfg.doc_infusion)},
           {"graph_infusion", infusion_json(cfg.graph_infusion)},
           {"train", train_json(cfg.train)},
           {"task", cfg.task},
           {"variant", cfg.variant},
           {"probe", cfg.probe},
           {"similarity", cfg.similarity},
           {"chunk_len", cfg.chunk_len},
           {"top_k", cfg.top_k},
           {"memory_layer", cfg.memory_layer},
           {"lora_rank", cfg.lora_rank},
           {"ca_heads", cfg.ca_heads},
           {"head_hidden", cfg.head_hidden}};
    return j.dump(2);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_hash(const RunConfig& cfg) {
    return hash_hex(fnv1a64(run_config_json(cfg)));
}

std::string data_hash(const RunConfig& cfg) { return data_hash(cfg.generator); }

std::string data_hash(const GeneratorConfig& cfg) {
    return hash_hex(fnv1a64(generator_json(cfg).dump()));
}

VariantFlags parse_variant(const std::string& name) {
    if (name == "k2k") return {true, true, true};
    if (name == "no-retrieval") return {false, false, false};
    if (name == "doc-only") return {true, true, false};
    if (name == "graph-only") return {true, false, true};
    throw std::invalid_argument("unknown variant: " + name);
}

PipelineConfig make_pipeline_config(const RunConfig& cfg) {
    PipelineConfig pc;
    pc.encoder = cfg.encoder;
    pc.chunk_len = cfg.chunk_len;
    pc.top_k = cfg.top_k;
    pc.ca_heads = cfg.ca_heads;
    pc.head_hidden = cfg.head_hidden;
    pc.probe.kind = parse_probe_kind(cfg.probe);
    pc.similarity = parse_similarity(cfg.similarity);
    const VariantFlags flags = parse_variant(cfg.variant);
    pc.use_retrieval = flags.use_retrieval;
    pc.use_doc = flags.use_doc;
    pc.use_graph = flags.use_graph;
    pc.validate();
    return pc;
}

}  // namespace keymem
