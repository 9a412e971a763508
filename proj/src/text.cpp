#include "diachron/text.hpp"

#include "diachron/utf8.hpp"

namespace diachron {

Normalizer Normalizer::arabic_default() {
    std::unordered_map<char32_t, char32_t> map;
    // Alef with hamza above/below, madda, wasla -> bare alef.
    map[0x0622] = 0x0627;
    map[0x0623] = 0x0627;
    map[0x0625] = 0x0627;
    map[0x0671] = 0x0627;
    // Alef maqsura -> ya.
    map[0x0649] = 0x064a;
    return Normalizer(std::move(map));
}

bool is_word_whitespace(char32_t cp) {
    switch (cp) {
        case U' ':
        case U'\t':
        case U'\n':
        case U'\r':
        case U'\v':
        case U'\f':
        case 0x00a0:  // no-break space
        case 0x2028:
        case 0x2029:
        case 0xfeff:  // BOM / zero-width no-break space
            return true;
        default:
            return false;
    }
}

bool is_edge_punctuation(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') || (cp >= '[' && cp <= '`') ||
               (cp >= '{' && cp <= '~');
    }
    switch (cp) {
        case 0x060c:  // Arabic comma
        case 0x061b:  // Arabic semicolon
        case 0x061f:  // Arabic question mark
        case 0x066d:  // Arabic five pointed star (text ornament)
        case 0x06d4:  // Arabic full stop
        case 0x00ab:  // guillemets
        case 0x00bb:
        case 0x2013:  // dashes
        case 0x2014:
        case 0x2018:  // curly quotes
        case 0x2019:
        case 0x201c:
        case 0x201d:
        case 0x2026:  // ellipsis
            return true;
        default:
            return false;
    }
}

std::vector<std::string> tokenize(std::string_view raw_text, const Normalizer& norm) {
    std::vector<std::string> tokens;
    const std::vector<char32_t> cps = utf8_decode(raw_text);

    std::size_t i = 0;
    const std::size_t n = cps.size();
    while (i < n) {
        while (i < n && is_word_whitespace(cps[i])) ++i;
        std::size_t j = i;
        while (j < n && !is_word_whitespace(cps[j])) ++j;
        if (j > i) {
            std::size_t b = i, e = j;
            while (b < e && is_edge_punctuation(cps[b])) ++b;
            while (e > b && is_edge_punctuation(cps[e - 1])) --e;
            if (e > b) {
                std::string tok;
                for (std::size_t k = b; k < e; ++k) utf8_append(tok, norm.apply(cps[k]));
                tokens.push_back(std::move(tok));
            }
        }
        i = j;
    }
    return tokens;
}

}  // namespace diachron
