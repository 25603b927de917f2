#include "manifest.hpp"

#include <fstream>
#include <sstream>

#include "tubule/errors.hpp"

namespace tubule::cli {

void Manifest::set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos) throw DataError("manifest: bad key '" + key + "'");
    if (value.find('\n') != std::string::npos) throw DataError("manifest: value of '" + key + "' spans lines");
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

const std::string* Manifest::find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return &v;
    return nullptr;
}

std::string Manifest::str() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
}

void Manifest::write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write manifest " + path.string());
    f << str();
}

Manifest Manifest::read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read manifest " + path.string());
    Manifest m;
    std::string line;
    std::size_t n = 0;
    while (std::getline(f, line)) {
        ++n;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw DataError("manifest " + path.string() + ": line " + std::to_string(n) + " is not key=value");
        }
        m.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return m;
}

}  // namespace tubule::cli
