#include "tubule/volume.hpp"

#include <algorithm>

namespace tubule {

void require_finite(const Volume& v, const char* what) {
    for (float x : v.data()) {
        if (!std::isfinite(x)) throw DataError(std::string(what) + ": volume contains non-finite values");
    }
}

void require_alphabet(const LabelMap& m, std::initializer_list<std::uint8_t> alphabet, const char* what) {
    for (auto v : m.data()) {
        if (std::find(alphabet.begin(), alphabet.end(), v) == alphabet.end()) {
            throw DataError(std::string(what) + ": label value " + std::to_string(int(v)) + " outside alphabet");
        }
    }
}

}  // namespace tubule
