#include "cdsynth/run.hpp"

#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "cdsynth/error.hpp"

namespace cdsynth {

using nlohmann::json;

struct RunConfig::Impl {
    std::map<std::string, json> values;            // resolved by precedence
    mutable std::map<std::string, json> accessed;  // key -> value handed out

    void record(const std::string& key, json value) const { accessed[key] = std::move(value); }
};

RunConfig::RunConfig() : impl_(std::make_unique<Impl>()) {}
RunConfig::~RunConfig() = default;
RunConfig::RunConfig(RunConfig&&) noexcept = default;
RunConfig& RunConfig::operator=(RunConfig&&) noexcept = default;

namespace {

void flatten_into(std::map<std::string, json>& out, const std::string& prefix, const json& node) {
    if (node.is_object()) {
        for (const auto& [k, v] : node.items()) {
            std::string key = prefix.empty() ? k : prefix + "." + k;
            flatten_into(out, key, v);
        }
        return;
    }
    out[prefix] = node;
}

} // namespace

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail_config("cannot open config file '" + path.string() + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        fail_config("config file '" + path.string() + "' is not a JSON object");
    flatten_into(impl_->values, "", j);
}

void RunConfig::apply_set(const std::string& key_eq_value) {
    std::size_t eq = key_eq_value.find('=');
    if (eq == std::string::npos || eq == 0)
        fail_config("override '" + key_eq_value + "' is not KEY=VALUE");
    std::string key = key_eq_value.substr(0, eq);
    std::string raw = key_eq_value.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw; // bare strings need no quoting
    impl_->values[key] = std::move(value);
}

void RunConfig::set_string(const std::string& key, const std::string& value) {
    impl_->values[key] = value;
}

bool RunConfig::has(const std::string& key) const { return impl_->values.count(key) != 0; }

namespace {

[[noreturn]] void wrong_type(const std::string& key, const char* want) {
    fail_config("config key '" + key + "' must be " + want);
}

} // namespace

std::string RunConfig::get_string(const std::string& key, const std::string& def) const {
    auto it = impl_->values.find(key);
    std::string v = def;
    if (it != impl_->values.end()) {
        if (!it->second.is_string()) wrong_type(key, "a string");
        v = it->second.get<std::string>();
    }
    impl_->record(key, v);
    return v;
}

std::string RunConfig::require_string(const std::string& key) const {
    auto it = impl_->values.find(key);
    if (it == impl_->values.end() || !it->second.is_string() || it->second.get<std::string>().empty())
        fail_config("config key '" + key + "' is required");
    std::string v = it->second.get<std::string>();
    impl_->record(key, v);
    return v;
}

double RunConfig::get_double(const std::string& key, double def) const {
    auto it = impl_->values.find(key);
    double v = def;
    if (it != impl_->values.end()) {
        if (!it->second.is_number()) wrong_type(key, "a number");
        v = it->second.get<double>();
    }
    impl_->record(key, v);
    return v;
}

std::int64_t RunConfig::get_int(const std::string& key, std::int64_t def) const {
    auto it = impl_->values.find(key);
    std::int64_t v = def;
    if (it != impl_->values.end()) {
        if (!it->second.is_number_integer()) wrong_type(key, "an integer");
        v = it->second.get<std::int64_t>();
    }
    impl_->record(key, v);
    return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t def) const {
    auto it = impl_->values.find(key);
    std::uint64_t v = def;
    if (it != impl_->values.end()) {
        if (!it->second.is_number_integer()) wrong_type(key, "an integer");
        if (it->second.is_number_unsigned())
            v = it->second.get<std::uint64_t>();
        else {
            std::int64_t s = it->second.get<std::int64_t>();
            if (s < 0) wrong_type(key, "a non-negative integer");
            v = static_cast<std::uint64_t>(s);
        }
    }
    impl_->record(key, v);
    return v;
}

bool RunConfig::get_bool(const std::string& key, bool def) const {
    auto it = impl_->values.find(key);
    bool v = def;
    if (it != impl_->values.end()) {
        if (!it->second.is_boolean()) wrong_type(key, "a boolean");
        v = it->second.get<bool>();
    }
    impl_->record(key, v);
    return v;
}

std::vector<double> RunConfig::get_double_list(const std::string& key, std::vector<double> def) const {
    auto it = impl_->values.find(key);
    std::vector<double> v = std::move(def);
    if (it != impl_->values.end()) {
        if (!it->second.is_array()) wrong_type(key, "an array of numbers");
        v.clear();
        for (const auto& e : it->second) {
            if (!e.is_number()) wrong_type(key, "an array of numbers");
            v.push_back(e.get<double>());
        }
    }
    impl_->record(key, v);
    return v;
}

std::vector<std::int64_t> RunConfig::get_int_list(const std::string& key,
                                                  std::vector<std::int64_t> def) const {
    auto it = impl_->values.find(key);
    std::vector<std::int64_t> v = std::move(def);
    if (it != impl_->values.end()) {
        if (!it->second.is_array()) wrong_type(key, "an array of integers");
        v.clear();
        for (const auto& e : it->second) {
            if (!e.is_number_integer()) wrong_type(key, "an array of integers");
            v.push_back(e.get<std::int64_t>());
        }
    }
    impl_->record(key, v);
    return v;
}

std::vector<std::string> RunConfig::get_string_list(const std::string& key,
                                                    std::vector<std::string> def) const {
    auto it = impl_->values.find(key);
    std::vector<std::string> v = std::move(def);
    if (it != impl_->values.end()) {
        if (!it->second.is_array()) wrong_type(key, "an array of strings");
        v.clear();
        for (const auto& e : it->second) {
            if (!e.is_string()) wrong_type(key, "an array of strings");
            v.push_back(e.get<std::string>());
        }
    }
    impl_->record(key, v);
    return v;
}

std::vector<std::string> RunConfig::accessed_keys() const {
    std::vector<std::string> out;
    out.reserve(impl_->accessed.size());
    for (const auto& [k, _] : impl_->accessed) out.push_back(k);
    return out;
}

std::string RunConfig::echo_json(std::span<const std::string> exclude) const {
    std::set<std::string> skip(exclude.begin(), exclude.end());
    json j = json::object();
    for (const auto& [k, v] : impl_->accessed) {
        if (skip.count(k)) continue;
        j[k] = v;
    }
    return j.dump();
}

} // namespace cdsynth
