#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace diachron {

/// Per-code-point rewrite applied to every token during tokenization.
/// The default map folds common Arabic orthographic variants (alef forms to
/// bare alef, alef maqsura to ya) and leaves everything else untouched, so it
/// is the identity on non-Arabic text.
class Normalizer {
public:
    Normalizer() = default;
    explicit Normalizer(std::unordered_map<char32_t, char32_t> map) : map_(std::move(map)) {}

    static Normalizer arabic_default();
    static Normalizer identity() { return Normalizer(); }

    char32_t apply(char32_t cp) const {
        auto it = map_.find(cp);
        return it == map_.end() ? cp : it->second;
    }

    bool empty() const { return map_.empty(); }

private:
    std::unordered_map<char32_t, char32_t> map_;
};

/// Splits on whitespace, strips punctuation from token edges, drops empty
/// tokens, applies the normalization map. Empty input yields an empty list.
std::vector<std::string> tokenize(std::string_view raw_text, const Normalizer& norm = Normalizer::arabic_default());

bool is_word_whitespace(char32_t cp);
bool is_edge_punctuation(char32_t cp);

}  // namespace diachron
