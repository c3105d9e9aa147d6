#pragma once
// Run configuration: a flat sectioned key=value file (TOML-compatible
// subset), typed lookups with defaults, and the run manifest written beside
// every output. Precedence is handled by the CLI: explicit flag beats the
// TF_SEED environment variable beats the file beats the built-in default.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tforge/featgen.hpp"
#include "tforge/fsta.hpp"
#include "tforge/soft_transfer.hpp"

namespace tforge {

// Keys are "section.key"; top-level keys have no dot. Scalars keep their
// raw text until a typed getter parses them, so unread junk only fails
// when something actually uses it.
struct ConfigFile {
    std::map<std::string, std::string> values;
    std::map<std::string, std::vector<std::string>> lists;

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
};

// Supported value forms: "string", bare number, true/false, [a, b, c].
// Comments start with # outside quotes. Unparseable lines are errors with
// file:line positions.
ConfigFile parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigFile load_config(const std::string& path);

// The union of settings the pipelines read, with the published defaults.
struct RunConfig {
    std::string annotations;
    std::string predictions;
    std::string features;
    std::string output;

    double k_i = 70.0;
    double k_e = 100.0;
    double tau_aff = 0.1;

    double k_s = 10.0;
    QMode q_mode = QMode::one_minus_minmax;

    FstaConfig fsta;
    GanConfig gan;

    std::vector<int> eval_ks = {50, 100};
    double iou_thr = 0.5;

    std::uint64_t seed = 0;

    static RunConfig from_file(const ConfigFile& file);
    void validate() const;
    // Resolved scalar echo for the manifest, stable key order.
    std::map<std::string, std::string> echo() const;
};

std::uint64_t hash_file(const std::string& path);  // FNV-1a over raw bytes
std::string hash_hex(std::uint64_t h);

// Writes "<output>.manifest.json": tool name, seed, resolved config echo,
// and FNV-1a hashes of the inputs and the output. No timestamps, so
// identical runs produce identical manifests.
void write_manifest(const std::string& output_path, const std::string& tool,
                    const std::map<std::string, std::string>& config_echo, std::uint64_t seed,
                    const std::vector<std::string>& inputs);

}  // namespace tforge
