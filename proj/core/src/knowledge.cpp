#include "keymem/knowledge.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace keymem {

std::vector<std::string> linearize(const Triple& t) {
    if (t.head.empty() || t.relation.empty() || t.tail.empty()) {
        throw std::invalid_argument("linearize: triple fields must be nonempty");
    }
    return {"The", "relationship", "between", t.head, "and", t.tail, "is", t.relation};
}

Triple parse_linearized(const std::vector<std::string>& tokens) {
    if (tokens.size() != 8 || tokens[0] != "The" || tokens[1] != "relationship" ||
        tokens[2] != "between" || tokens[4] != "and" || tokens[6] != "is") {
        throw std::invalid_argument("parse_linearized: not a linearized triple");
    }
    return {tokens[3], tokens[7], tokens[5]};
}

double corpus_perplexity(const EncoderParams& params, const std::vector<TokenSequence>& docs,
                         const LoraSet* adapters) {
    if (docs.empty()) {
        throw std::invalid_argument("corpus_perplexity: empty document list");
    }
    double total = 0.0;
    for (const auto& doc : docs) {
        total += next_token_loss(params, doc, adapters);
    }
    return std::exp(total / static_cast<double>(docs.size()));
}

namespace {

std::vector<TokenSequence> tokenize_all(const std::vector<std::vector<std::string>>& lines,
                                        const Vocabulary& vocab) {
    std::vector<TokenSequence> out;
    out.reserve(lines.size());
    for (const auto& line : lines) {
        if (line.size() < 2) continue;  // nothing to predict
        out.push_back(tokenize_line(line, vocab));
    }
    return out;
}

void scale_refs(const std::vector<TensorRef>& refs, double factor) {
    for (const auto& r : refs) {
        for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= factor;
    }
}

void zero_refs(const std::vector<TensorRef>& refs) {
    for (const auto& r : refs) {
        std::fill(r.data, r.data + r.size, 0.0);
    }
}

}  // namespace

InfusionReport train_document_memory(EncoderParams& params,
                                     const std::vector<std::vector<std::string>>& corpus,
                                     const Vocabulary& vocab, const InfusionConfig& config) {
    if (corpus.empty()) {
        throw std::invalid_argument("train_document_memory: empty corpus");
    }
    std::vector<TokenSequence> docs = tokenize_all(corpus, vocab);
    if (docs.empty()) {
        throw std::invalid_argument("train_document_memory: no document has two tokens");
    }

    Rng rng(config.seed);
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::size_t n_holdout = static_cast<std::size_t>(
        config.holdout_fraction * static_cast<double>(docs.size()));
    if (n_holdout >= docs.size()) n_holdout = docs.size() - 1;

    std::vector<TokenSequence> holdout, train;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_holdout ? holdout : train).push_back(docs[order[i]]);
    }
    if (train.empty()) {
        throw std::invalid_argument("train_document_memory: holdout leaves no training data");
    }

    InfusionReport report;
    if (!holdout.empty()) {
        report.holdout_perplexity_before = corpus_perplexity(params, holdout);
    }

    EncoderParams grads = zero_like(params);
    const std::vector<TensorRef> p_refs = param_refs(params);
    const std::vector<TensorRef> g_refs = param_refs(grads);
    AdamW opt(config.optimizer);

    std::vector<std::size_t> epoch_order(train.size());
    std::iota(epoch_order.begin(), epoch_order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(epoch_order);
        double epoch_loss = 0.0;
        std::size_t pos = 0;
        while (pos < epoch_order.size()) {
            const std::size_t batch_end = std::min(pos + config.batch_size, epoch_order.size());
            zero_refs(g_refs);
            double batch_loss = 0.0;
            for (std::size_t i = pos; i < batch_end; ++i) {
                batch_loss += next_token_loss_backward(params, train[epoch_order[i]], nullptr,
                                                       &grads, nullptr, nullptr);
            }
            const double inv = 1.0 / static_cast<double>(batch_end - pos);
            scale_refs(g_refs, inv);
            opt.step(p_refs, g_refs);
            epoch_loss += batch_loss;
            pos = batch_end;
        }
        epoch_loss /= static_cast<double>(epoch_order.size());
        report.epoch_losses.push_back(epoch_loss);
        if (epoch == 0) report.initial_loss = epoch_loss;
        report.final_loss = epoch_loss;
    }
    if (!holdout.empty()) {
        report.holdout_perplexity_after = corpus_perplexity(params, holdout);
    }
    return report;
}

LoraSet train_graph_memory(const EncoderParams& base, const std::vector<Triple>& triples,
                           const Vocabulary& vocab, std::size_t rank,
                           const InfusionConfig& config, InfusionReport* report) {
    if (triples.empty()) {
        throw std::invalid_argument("train_graph_memory: empty triple list");
    }
    std::vector<TokenSequence> docs;
    docs.reserve(triples.size());
    for (const auto& t : triples) {
        docs.push_back(tokenize_line(linearize(t), vocab));
    }

    Rng rng(config.seed);
    LoraSet adapters = init_lora(base.config, rank, rng);
    LoraSet grads = zero_like(adapters);
    const std::vector<TensorRef> p_refs = lora_refs(adapters);
    const std::vector<TensorRef> g_refs = lora_refs(grads);
    AdamW opt(config.optimizer);

    InfusionReport local;
    InfusionReport& rep = report != nullptr ? *report : local;

    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t batch_end = std::min(pos + config.batch_size, order.size());
            zero_refs(g_refs);
            double batch_loss = 0.0;
            for (std::size_t i = pos; i < batch_end; ++i) {
                // Base gradients are not even computed: only adapter tensors move.
                batch_loss += next_token_loss_backward(base, docs[order[i]], &adapters, nullptr,
                                                       &grads, nullptr);
            }
            const double inv = 1.0 / static_cast<double>(batch_end - pos);
            scale_refs(g_refs, inv);
            opt.step(p_refs, g_refs);
            epoch_loss += batch_loss;
            pos = batch_end;
        }
        epoch_loss /= static_cast<double>(order.size());
        rep.epoch_losses.push_back(epoch_loss);
        if (epoch == 0) rep.initial_loss = epoch_loss;
        rep.final_loss = epoch_loss;
    }
    return adapters;
}

}  // namespace keymem
