#include "lmflow/manifest.hpp"

#include "lmflow/types.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace lmflow {

std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x00000100000001B3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path + "' for digest");
    std::ostringstream buf;
    buf << in.rdbuf();
    return fnv1a64_hex(buf.str());
}

void RunManifest::add_input(const std::string& path) {
    inputs.emplace_back(path, digest_file(path));
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;  // std::map: keys come out sorted
    nlohmann::json ins = nlohmann::json::object();
    for (const auto& [path, digest] : inputs) ins[path] = digest;
    j["inputs"] = ins;
    j["seed"] = seed;
    j["version"] = version;
    return j.dump();
}

}  // namespace lmflow
