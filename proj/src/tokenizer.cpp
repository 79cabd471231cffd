#include "qcount/tokenizer.hpp"

#include <sstream>

namespace qcount {

namespace {
const char* const template_words[] = {"a", "photo", "of"};
}

VocabTokenizer::VocabTokenizer(const std::vector<std::string>& categories, int max_count, int max_seq_len)
    : categories_(categories), max_seq_len_(max_seq_len) {
    if (max_count < 0) throw std::invalid_argument("max_count must be nonnegative");
    if (max_seq_len < 1) throw std::invalid_argument("max_seq_len must be positive");
    auto push = [this](const std::string& w) {
        if (index_.count(w)) throw std::invalid_argument("duplicate vocabulary word: " + w);
        index_.emplace(w, static_cast<int>(words_.size()));
        words_.push_back(w);
    };
    push(pad_token);
    push(eot_token);
    for (const char* w : template_words) push(w);
    for (const auto& c : categories) push(c);
    first_number_ = static_cast<int>(words_.size());
    for (int q = 0; q <= max_count; ++q) push(std::to_string(q));
    last_number_ = static_cast<int>(words_.size()) - 1;
    pad_id_ = index_.at(pad_token);
}

int VocabTokenizer::id_of(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw UnknownWordError(word);
    return it->second;
}

TokenSequence VocabTokenizer::tokenize(const std::string& text) const {
    std::istringstream in(text);
    std::string word;
    TokenSequence seq;
    while (in >> word) {
        if (static_cast<int>(seq.ids.size()) == max_seq_len_)
            throw SequenceOverflowError("text exceeds max_seq_len of " + std::to_string(max_seq_len_) + " tokens");
        seq.ids.push_back(id_of(word));
    }
    if (seq.ids.empty()) throw std::invalid_argument("cannot tokenize empty text");
    seq.length = static_cast<int>(seq.ids.size());
    seq.eot_index = seq.length - 1;
    seq.ids.resize(static_cast<std::size_t>(max_seq_len_), pad_id_);
    return seq;
}

std::string VocabTokenizer::decode(const TokenSequence& seq) const {
    std::string out;
    for (int i = 0; i < seq.length; ++i) {
        if (i) out += ' ';
        out += word_of(seq.ids[static_cast<std::size_t>(i)]);
    }
    return out;
}

bool VocabTokenizer::contains_number(const TokenSequence& seq) const {
    for (int i = 0; i < seq.length; ++i)
        if (is_number(seq.ids[static_cast<std::size_t>(i)])) return true;
    return false;
}

std::string inference_text(const std::string& category) { return "a photo of " + category; }

std::string training_text(const std::string& category, int quantity) {
    return "a photo of " + std::to_string(quantity) + " " + category;
}

}  // namespace qcount
