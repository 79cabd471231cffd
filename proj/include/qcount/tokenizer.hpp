#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace qcount {

class UnknownWordError : public std::invalid_argument {
  public:
    explicit UnknownWordError(const std::string& word)
        : std::invalid_argument("unknown word '" + word + "' (closed vocabulary)"), word_(word) {}
    const std::string& word() const { return word_; }

  private:
    std::string word_;
};

class SequenceOverflowError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct TokenSequence {
    std::vector<int> ids;  // padded to max_seq_len
    int length = 0;        // number of word tokens
    int eot_index = -1;    // last non-pad position
};

/// Closed-vocabulary whitespace tokenizer over template words, category
/// names and integer tokens "0".."max_count".
class VocabTokenizer {
  public:
    static constexpr const char* pad_token = "<pad>";
    static constexpr const char* eot_token = "<eot>";

    VocabTokenizer(const std::vector<std::string>& categories, int max_count, int max_seq_len = 8);

    TokenSequence tokenize(const std::string& text) const;
    std::string decode(const TokenSequence& seq) const;

    int id_of(const std::string& word) const;
    const std::string& word_of(int id) const { return words_.at(static_cast<std::size_t>(id)); }
    bool is_number(int id) const { return id >= first_number_ && id <= last_number_; }
    bool contains_number(const TokenSequence& seq) const;

    int vocab_size() const { return static_cast<int>(words_.size()); }
    int max_seq_len() const { return max_seq_len_; }
    int max_count() const { return last_number_ - first_number_; }
    int pad_id() const { return pad_id_; }
    const std::vector<std::string>& categories() const { return categories_; }

  private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::string> categories_;
    int max_seq_len_;
    int first_number_ = 0;
    int last_number_ = 0;
    int pad_id_ = 0;
};

/// "a photo of {category}"
std::string inference_text(const std::string& category);
/// "a photo of {q} {category}"
std::string training_text(const std::string& category, int quantity);

}  // namespace qcount
