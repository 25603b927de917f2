#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace tubule::cli {

/// Flat key=value run record. Keys keep insertion order; `timing.*` keys
/// hold wall-clock milliseconds and are the only fields expected to differ
/// between two runs of the same command.
class Manifest {
public:
    void set(const std::string& key, const std::string& value);
    const std::string* find(const std::string& key) const;
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string str() const;
    void write(const std::filesystem::path& path) const;
    static Manifest read(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace tubule::cli
