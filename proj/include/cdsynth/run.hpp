#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cdsynth {

// Layered run configuration with access recording. Values resolve with the
// precedence: defaults < config file < --set overrides < dedicated flags.
// Every read is recorded together with the resolved value, which drives two
// contracts: each subcommand's --help lists exactly the keys it reads, and
// manifests echo the resolved configuration of the run.
class RunConfig {
public:
    RunConfig();
    ~RunConfig();
    RunConfig(RunConfig&&) noexcept;
    RunConfig& operator=(RunConfig&&) noexcept;

    // Merges a JSON object file over the current values. Nested objects
    // flatten to dotted keys ({"contrastive": {"alpha": ...}} and
    // {"contrastive.alpha": ...} are equivalent).
    void merge_file(const std::filesystem::path& path);
    // KEY=VALUE where VALUE parses as JSON when possible and falls back to a
    // plain string.
    void apply_set(const std::string& key_eq_value);
    void set_string(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& def) const;
    std::string require_string(const std::string& key) const;
    double get_double(const std::string& key, double def) const;
    std::int64_t get_int(const std::string& key, std::int64_t def) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
    bool get_bool(const std::string& key, bool def) const;
    std::vector<double> get_double_list(const std::string& key, std::vector<double> def) const;
    std::vector<std::int64_t> get_int_list(const std::string& key, std::vector<std::int64_t> def) const;
    std::vector<std::string> get_string_list(const std::string& key,
                                             std::vector<std::string> def) const;

    // Sorted unique keys read so far.
    std::vector<std::string> accessed_keys() const;
    // Resolved values of the keys read so far as a flat JSON object with
    // dotted keys, minus `exclude`.
    std::string echo_json(std::span<const std::string> exclude = {}) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Entry point shared by the binary and the tests. Parses argv, dispatches
// the subcommand, and maps errors to exit codes: 0 success, 2 configuration,
// 3 data, 4 endpoint, 5 failed verification gate.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Dispatch one subcommand against an already-layered configuration. Throws
// Error instead of mapping to exit codes; run_cli wraps this.
int run_command(const std::string& name, RunConfig& cfg, std::ostream& out, std::ostream& err);

// Documented configuration keys of one subcommand, formatted for --help.
// Exposed so tests can compare the documentation against recorded accesses.
std::vector<std::string> command_config_keys(const std::string& command);
std::vector<std::string> command_names();

} // namespace cdsynth
