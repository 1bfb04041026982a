#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lmflow {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a 64-bit digest, hex-encoded. Stable content fingerprint for manifests.
std::string fnv1a64_hex(const std::string& bytes);
std::string digest_file(const std::string& path);

// Provenance record attached to every output: the command, the fully resolved
// configuration, input digests, seed and tool version. All fields are
// deterministic so reruns reproduce outputs bit-exactly; wall-clock duration
// is deliberately kept out (it is reported on stderr and in the sidecar
// .manifest.json instead).
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;  // resolved key=value settings
    std::vector<std::pair<std::string, std::string>> inputs;  // path -> digest
    std::uint64_t seed = 0;
    std::string version = kToolVersion;

    void add_input(const std::string& path);
    std::string to_json() const;  // compact, key-sorted
};

}  // namespace lmflow
